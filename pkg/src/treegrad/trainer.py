"""Sine-wave experiment harness: data, training loop, sweeps, gradient checks."""

import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import ndcore
from .graph import backward, no_grad
from .lstm import AS_PRINTED, CELL_VARIANTS
from .model import BlockChain, DivergenceError, ModelParams, predict_step, train_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    intvl: int = 10
    epochs: int = 1000
    hidden: int = 16
    lr: float = 0.1
    seed: int = 42
    seq_len: int = 4
    batch_m: int = 4
    sine_step: float = 0.6
    eps: float = 1e-5
    eq17_variant: str = AS_PRINTED
    clip: float = None
    init_scale: float = 0.3

    def __post_init__(self):
        for name in ("intvl", "epochs", "hidden", "seq_len", "batch_m"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("lr", "sine_step", "eps", "init_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_m < self.seq_len:
            raise ValueError("batch_m must be at least seq_len")
        if self.eq17_variant not in CELL_VARIANTS:
            raise ValueError(f"eq17_variant must be one of {CELL_VARIANTS}")
        if self.clip is not None and not self.clip > 0:
            raise ValueError("clip must be positive or None")


@dataclass
class TrainLog:
    config: TrainConfig
    rows: list = field(default_factory=list)  # (epoch, step, loss, elapsed_ms)
    error: Exception = None

    @property
    def losses(self):
        return np.array([r[2] for r in self.rows])

    @property
    def elapsed_ms(self):
        return np.array([r[3] for r in self.rows])

    def to_csv(self, timing=True):
        header = "epoch,step,loss,elapsed_ms" if timing else "epoch,step,loss"
        lines = [header]
        for epoch, step, loss, ms in self.rows:
            cols = [str(epoch), str(step), f"{loss:.17g}"]
            if timing:
                cols.append(f"{ms:.6f}")
            lines.append(",".join(cols))
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        write_atomic(path, self.to_csv())


@dataclass
class PredictionTrace:
    rows: list = field(default_factory=list)  # (t, input, predicted)

    def to_csv(self):
        lines = ["t,input,predicted"]
        lines += [f"{t:.17g},{x:.17g},{y:.17g}" for t, x, y in self.rows]
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        write_atomic(path, self.to_csv())


def write_atomic(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def gen_sine(n, step, phase=0.0):
    if n < 1 or not step > 0:
        raise ValueError("gen_sine needs n >= 1 and step > 0")
    return np.sin(phase + np.arange(n) * step)


def make_chain(config, params=None):
    if params is None:
        params = ModelParams.init(config.hidden, ndcore.make_rng(config.seed), config.init_scale)
    return BlockChain(
        params,
        intvl=config.intvl,
        seq_len=config.seq_len,
        batch_m=config.batch_m,
        epsilon=config.eps,
        variant=config.eq17_variant,
        clip=config.clip,
    )


class TrainingRun:
    """Steppable training loop: one call to ``step`` is one epoch."""

    def __init__(self, config):
        self.config = config
        self.chain = make_chain(config)
        self.series = gen_sine(config.epochs + config.batch_m + 1, config.sine_step)
        self.log = TrainLog(config)
        self.epoch = 0

    @property
    def done(self):
        return self.epoch >= self.config.epochs or self.log.error is not None

    def step(self):
        m, k = self.config.batch_m, self.epoch
        window = self.series[k : k + m].reshape(-1, 1)
        target = self.series[k + m].reshape(1, 1)
        self.epoch += 1
        try:
            loss, elapsed = train_step(self.chain, window, target, self.config.lr, step=self.epoch)
        except DivergenceError as err:
            self.log.error = err
            err.log = self.log
            raise
        self.log.rows.append((self.epoch, self.epoch, loss, elapsed * 1e3))
        return loss


def train(config, callback=None):
    """Train on successive sine windows; one step per epoch.

    ``callback(epoch, chain)`` runs after every step.  A divergence
    re-raises with the partial log attached as ``err.log``.
    """
    run = TrainingRun(config)
    while not run.done:
        run.step()
        if callback is not None:
            callback(run.epoch, run.chain)
    return run.chain, run.log


def predict(chain, prime, horizon, step=1.0, t0=0.0):
    """Closed-loop generation after priming on ``prime``.

    Row ``k`` is the sample at series index ``len(prime) + k`` (time
    ``t0 + index * step``); ``input`` is the value fed as the newest
    input for that prediction.  Parameters are never touched.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    history = [float(x) for x in prime]
    width = chain.batch_m
    if len(history) < width:
        raise ValueError(f"prime needs at least {width} samples")
    state, steps = None, 0

    def advance(window):
        nonlocal state, steps
        pred, state = predict_step(chain, state, np.array(window).reshape(-1, 1))
        steps += 1
        if steps >= chain.intvl:
            state, steps = None, 0
        return pred

    with no_grad():
        # state priming on every complete window except the last
        for end in range(width, len(history)):
            advance(history[end - width : end])
        trace = PredictionTrace()
        for k in range(horizon):
            window = history[-width:]
            pred = advance(window)
            idx = len(history)
            trace.rows.append((t0 + idx * step, window[-1], pred))
            history.append(pred)
    return trace


SCHEDULES = ("sequential", "interleaved", "parallel")


def sweep(base, intvls, schedule="sequential"):
    """Train once per interval value; failures are kept with their partial logs.

    ``sequential`` runs configurations back to back.  ``interleaved`` also
    runs on one thread but advances the configurations one step each in
    turn, so slow drift in machine speed affects all of them alike.
    ``parallel`` puts each configuration on its own thread.
    """
    intvls = list(intvls)
    if not intvls:
        raise ValueError("sweep needs at least one intvl")
    if schedule not in SCHEDULES:
        raise ValueError(f"schedule must be one of {SCHEDULES}")
    runs = [TrainingRun(replace(base, intvl=i)) for i in intvls]

    def advance(run):
        try:
            run.step()
        except DivergenceError as err:
            log.warning("intvl=%d diverged at step %s", run.config.intvl, err.step)

    def finish(run):
        while not run.done:
            advance(run)

    if schedule == "interleaved":
        while not all(r.done for r in runs):
            for r in runs:
                if not r.done:
                    advance(r)
    elif schedule == "parallel":
        with ThreadPoolExecutor(max_workers=len(runs)) as pool:
            list(pool.map(finish, runs))
    else:
        for r in runs:
            finish(r)
    return [(r.config.intvl, r.log) for r in runs]


# -- finite-difference gradient check ---------------------------------------


def flatten(variables):
    return np.concatenate([v.value.ravel() for v in variables])


def unflatten(theta, shapes):
    out, pos = [], 0
    for r, c in shapes:
        out.append(np.array(theta[pos : pos + r * c]).reshape(r, c))
        pos += r * c
    if pos != len(theta):
        raise ValueError(f"theta has {len(theta)} entries, shapes need {pos}")
    return out


class EvaluationError(ArithmeticError):
    pass


def grad_check(builder, theta, epsilon=1e-6, floor=1e-8, objective=None):
    """Max relative error of autodiff vs central differences.

    ``builder(theta)`` must return ``(output, leaves)`` where ``output`` is a
    1x1 Variable and ``flatten(leaves)`` equals ``theta``.  Coordinates whose
    magnitude is below ``floor`` are compared by absolute error instead.

    ``objective``, if given, is an independent scalar implementation of the
    same function used for the differences.  It is called with a long double
    ``theta``, which keeps difference roundoff far below float64 gradients.
    """
    theta = np.asarray(theta, dtype=np.float64)
    out, leaves = builder(theta)
    backward(out)
    analytic = np.concatenate(
        [(v.grad if v.grad is not None else np.zeros_like(v.value)).ravel() for v in leaves]
    )

    def f(th):
        if objective is not None:
            val = objective(th)
        else:
            with no_grad():
                val = builder(th)[0].value[0, 0]
        if not np.isfinite(val):
            raise EvaluationError(f"non-finite objective {val}")
        return val

    base = theta.astype(np.longdouble) if objective is not None else theta
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        plus, minus = base.copy(), base.copy()
        plus[i] += epsilon
        minus[i] -= epsilon
        numeric[i] = (f(plus) - f(minus)) / (2 * epsilon)
    return relative_error(analytic, numeric, floor)


def relative_error(analytic, numeric, floor=1e-8):
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.where(np.abs(analytic) > floor, diff / np.where(scale > 0, scale, 1.0), diff)
    return float(err.max()) if err.size else 0.0


def config_dict(config):
    return asdict(config)
