"""Command-line front end: ``treegrad {train,sweep,predict,gradcheck}``."""

import argparse
import math
import os
import sys
import time
from dataclasses import replace

from .checks import max_errors
from .model import DivergenceError, ModelParams
from .trainer import TrainConfig, gen_sine, make_chain, predict, sweep, train

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2
GRADCHECK_TOL = 1e-5


def positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def positive_float(text):
    value = float(text)
    if not value > 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def int_list(text):
    try:
        values = [positive_int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated positive integers, got {text}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def clip_value(text):
    return None if text == "off" else positive_float(text)


def _config_flags(p):
    d = TrainConfig()
    p.add_argument("--intvl", type=positive_int, default=d.intvl, help="state-initialization interval in steps (default: %(default)s)")
    p.add_argument("--epochs", type=positive_int, default=d.epochs, help="training steps (default: %(default)s)")
    p.add_argument("--hidden", type=positive_int, default=d.hidden, help="hidden size (default: %(default)s)")
    p.add_argument("--lr", type=positive_float, default=d.lr, help="SGD learning rate (default: %(default)s)")
    p.add_argument("--seed", type=int, default=d.seed, help="RNG seed (default: %(default)s)")
    p.add_argument("--seq-len", type=positive_int, default=d.seq_len, help="leaf samples per block (default: %(default)s)")
    p.add_argument("--batch-m", type=positive_int, default=d.batch_m, help="standardization batch length (default: %(default)s)")
    p.add_argument("--sine-step", type=positive_float, default=d.sine_step, help="phase increment per sample (default: %(default)s)")
    p.add_argument("--init-scale", type=positive_float, default=d.init_scale, help="uniform init half-width (default: %(default)s)")
    p.add_argument("--eps", type=positive_float, default=d.eps, help="standardization epsilon (default: %(default)s)")
    p.add_argument("--eq17", choices=["as_printed", "symmetric"], default=d.eq17_variant,
                   help="tree cell update (default: %(default)s)")
    p.add_argument("--clip", type=clip_value, default=None, metavar="VAL|off",
                   help="elementwise gradient clip (default: off)")


def build_parser():
    parser = argparse.ArgumentParser(prog="treegrad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration and write its loss log")
    _config_flags(p)
    p.add_argument("--out", default="train.csv", help="loss log CSV (default: %(default)s)")
    p.add_argument("--save-params", help="write a flat text dump of the trained parameters")

    p = sub.add_parser("sweep", help="train once per interval value")
    _config_flags(p)
    p.add_argument("--intvls", type=int_list, default=[5, 10, 15], help="comma-separated intervals (default: 5,10,15)")
    p.add_argument("--parallel", action="store_true", help="run configurations on threads")
    p.add_argument("--interleave", action="store_true",
                   help="single thread, configurations advance one step each in turn")
    p.add_argument("--out", default="sweep.csv", help="base CSV path, suffixed _i<intvl> (default: %(default)s)")

    p = sub.add_parser("predict", help="closed-loop sine generation")
    _config_flags(p)
    p.add_argument("--params", help="parameter dump to load instead of training")
    p.add_argument("--horizon", type=positive_int, default=None, help="generated steps (default: one period)")
    p.add_argument("--out", default="predict.csv", help="prediction CSV (default: %(default)s)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every function kind")
    p.add_argument("--instances", type=positive_int, default=20, help="random instances per kind (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config(args):
    return TrainConfig(
        intvl=args.intvl,
        epochs=args.epochs,
        hidden=args.hidden,
        lr=args.lr,
        seed=args.seed,
        seq_len=args.seq_len,
        batch_m=args.batch_m,
        sine_step=args.sine_step,
        eps=args.eps,
        eq17_variant=args.eq17,
        clip=args.clip,
        init_scale=args.init_scale,
    )


def suffixed(path, intvl):
    root, ext = os.path.splitext(path)
    return f"{root}_i{intvl}{ext or '.csv'}"


def _train(args, cfg):
    t0 = time.perf_counter()
    try:
        chain, tlog = train(cfg)
    except DivergenceError as err:
        err.log.write_csv(args.out)
        print(f"diverged at step {err.step}; partial log written to {args.out}", file=sys.stderr)
        return EXIT_DIVERGED
    tlog.write_csv(args.out)
    print(f"final loss {tlog.rows[-1][2]:.6g}")
    print(f"total time {time.perf_counter() - t0:.2f} s")
    print(f"wrote {args.out}")
    if args.save_params:
        with open(args.save_params, "w") as fh:
            fh.write(chain.params.dump())
        print(f"wrote {args.save_params}")
    return EXIT_OK


def _sweep(args, base):
    t0 = time.perf_counter()
    status = EXIT_OK
    if args.parallel and args.interleave:
        print("error: --parallel and --interleave are exclusive", file=sys.stderr)
        return EXIT_USAGE
    schedule = "parallel" if args.parallel else "interleaved" if args.interleave else "sequential"
    for intvl, tlog in sweep(base, args.intvls, schedule=schedule):
        path = suffixed(args.out, intvl)
        tlog.write_csv(path)
        if tlog.error is not None:
            status = EXIT_DIVERGED
            print(f"intvl={intvl}: diverged at step {tlog.error.step}; partial log {path}")
            continue
        ms = tlog.elapsed_ms
        print(f"intvl={intvl}: final loss {tlog.rows[-1][2]:.6g}, "
              f"mean step {ms.mean():.3f} ms, total {ms.sum() / 1e3:.2f} s, wrote {path}")
    print(f"total time {time.perf_counter() - t0:.2f} s")
    return status


def _predict(args, cfg):
    if args.params:
        with open(args.params) as fh:
            chain = make_chain(cfg, ModelParams.load(fh.read()))
        cfg = replace(cfg, hidden=chain.params.hidden)
    else:
        try:
            chain, _ = train(cfg)
        except DivergenceError as err:
            print(f"diverged at step {err.step}", file=sys.stderr)
            return EXIT_DIVERGED
    horizon = args.horizon or max(1, round(2 * math.pi / cfg.sine_step))
    prime = gen_sine(cfg.epochs + cfg.batch_m, cfg.sine_step)
    trace = predict(chain, prime, horizon, step=cfg.sine_step)
    trace.write_csv(args.out)
    err = sum(abs(y - math.sin(t)) for t, _, y in trace.rows) / len(trace.rows)
    print(f"mean |predicted - sin| over {horizon} steps: {err:.6g}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _gradcheck(args, _cfg=None):
    errors = max_errors(args.instances, args.seed)
    ok = True
    for name, err in errors.items():
        flag = "ok" if err < GRADCHECK_TOL else "FAIL"
        ok &= err < GRADCHECK_TOL
        print(f"{name:16s} {err:.3e} {flag}")
    return EXIT_OK if ok else EXIT_DIVERGED


COMMANDS = {"train": _train, "sweep": _sweep, "predict": _predict, "gradcheck": _gradcheck}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    cfg = None
    if args.command != "gradcheck":
        try:
            cfg = _config(args)
        except ValueError as err:
            parser.print_usage(sys.stderr)
            print(f"error: {err}", file=sys.stderr)
            return EXIT_USAGE
    return COMMANDS[args.command](args, cfg)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
