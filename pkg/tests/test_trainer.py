import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treegrad import ndcore
from treegrad.graph import Variable
from treegrad.functions import add_node, hadamard_node, matmul_node
from treegrad.model import DivergenceError, ModelParams
from treegrad.trainer import (
    EvaluationError,
    TrainConfig,
    TrainLog,
    gen_sine,
    grad_check,
    make_chain,
    predict,
    relative_error,
    sweep,
    train,
    unflatten,
    write_atomic,
)

SMALL = TrainConfig(epochs=40, hidden=6)


def test_gen_sine_quarter_turns():
    np.testing.assert_allclose(gen_sine(3, math.pi / 2), [0, 1, 0], atol=1e-12)


@given(st.integers(1, 50), st.floats(0.01, 3.0))
def test_gen_sine_phase_pi_flips_sign(n, step):
    np.testing.assert_allclose(gen_sine(n, step, math.pi), -gen_sine(n, step), atol=1e-12)


def test_gen_sine_period():
    k = 8
    s = gen_sine(40, 2 * math.pi / k)
    np.testing.assert_allclose(s[:-k], s[k:], atol=1e-9)


def test_gen_sine_rejects_bad_args():
    with pytest.raises(ValueError):
        gen_sine(0, 1.0)
    with pytest.raises(ValueError):
        gen_sine(3, 0.0)


@pytest.mark.parametrize("field,value", [("intvl", 0), ("lr", 0.0), ("batch_m", 2), ("eq17_variant", "x"), ("clip", -1.0)])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        TrainConfig(**{field: value})


def test_one_epoch_one_row():
    _, tlog = train(TrainConfig(epochs=1, hidden=4))
    assert len(tlog.rows) == 1
    epoch, step, loss, ms = tlog.rows[0]
    assert (epoch, step) == (1, 1) and ms > 0 and math.isfinite(loss)


def test_training_is_deterministic():
    a = train(SMALL)[1].to_csv(timing=False)
    b = train(SMALL)[1].to_csv(timing=False)
    assert a == b
    assert a != train(TrainConfig(epochs=40, hidden=6, seed=7))[1].to_csv(timing=False)


def test_csv_format():
    _, tlog = train(TrainConfig(epochs=3, hidden=4))
    lines = tlog.to_csv().splitlines()
    assert lines[0] == "epoch,step,loss,elapsed_ms"
    assert len(lines) == 4
    loss = lines[1].split(",")[2]
    assert float(loss) == tlog.rows[0][2]
    assert tlog.to_csv(timing=False).splitlines()[0] == "epoch,step,loss"


def test_write_atomic_replaces_file(tmp_path):
    path = tmp_path / "out.csv"
    path.write_text("old")
    write_atomic(path, "new\n")
    assert path.read_text() == "new\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]


def poisoned_sine(at):
    def gen(n, step, phase=0.0):
        s = np.sin(phase + np.arange(n) * step)
        s[at] = np.nan
        return s

    return gen


def test_divergence_keeps_partial_log(monkeypatch):
    import treegrad.trainer as trainer

    # sample 12 is the target of epoch 9
    monkeypatch.setattr(trainer, "gen_sine", poisoned_sine(12))
    with pytest.raises(DivergenceError) as info:
        train(TrainConfig(epochs=20, hidden=4))
    err = info.value
    assert err.step == 9
    assert isinstance(err.log, TrainLog)
    assert len(err.log.rows) == 8


def test_predict_horizon_one():
    chain, _ = train(TrainConfig(epochs=5, hidden=4))
    prime = gen_sine(12, 0.6)
    trace = predict(chain, prime, 1, step=0.6)
    assert len(trace.rows) == 1
    t, x, _ = trace.rows[0]
    assert t == pytest.approx(12 * 0.6)
    assert x == prime[-1]


def test_predict_leaves_parameters_alone():
    chain, _ = train(TrainConfig(epochs=5, hidden=4))
    before = [p.value.copy() for p in chain.parameters()]
    trace = predict(chain, gen_sine(20, 0.6), 15, step=0.6)
    ts = [r[0] for r in trace.rows]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    for a, p in zip(before, chain.parameters()):
        np.testing.assert_array_equal(a, p.value)


def test_zero_head_predicts_constant():
    params = ModelParams.init(4, ndcore.make_rng(0), 0.3)
    params.head_W.value = np.zeros_like(params.head_W.value)
    params.head_b.value = np.zeros_like(params.head_b.value)
    chain = make_chain(TrainConfig(hidden=4), params)
    trace = predict(chain, gen_sine(10, 0.6), 6, step=0.6)
    assert all(y == 0.0 for _, _, y in trace.rows)


def test_predict_needs_full_window():
    chain = make_chain(TrainConfig(hidden=4))
    with pytest.raises(ValueError):
        predict(chain, [0.1, 0.2], 3)


@pytest.mark.parametrize("schedule", ["sequential", "interleaved", "parallel"])
def test_sweep_schedules_agree(schedule):
    base = TrainConfig(epochs=30, hidden=4)
    out = sweep(base, [5, 10, 15], schedule=schedule)
    assert [i for i, _ in out] == [5, 10, 15]
    for intvl, tlog in out:
        assert len(tlog.rows) == 30
        assert tlog.to_csv(timing=False) == train(TrainConfig(epochs=30, hidden=4, intvl=intvl))[1].to_csv(timing=False)


def test_singleton_sweep_is_train():
    base = TrainConfig(epochs=10, hidden=4, intvl=3)
    [(intvl, tlog)] = sweep(base, [3])
    assert intvl == 3
    assert tlog.to_csv(timing=False) == train(base)[1].to_csv(timing=False)


def test_sweep_isolates_failures(monkeypatch):
    import treegrad.trainer as trainer

    monkeypatch.setattr(trainer, "gen_sine", poisoned_sine(12))
    out = sweep(TrainConfig(epochs=20, hidden=4), [2, 3])
    assert [len(tlog.rows) for _, tlog in out] == [8, 8]
    assert all(isinstance(tlog.error, DivergenceError) for _, tlog in out)


def test_sweep_argument_errors():
    with pytest.raises(ValueError):
        sweep(SMALL, [])
    with pytest.raises(ValueError):
        sweep(SMALL, [5], schedule="random")


def test_grad_check_quadratic():
    def build(th):
        v = Variable(unflatten(th, [(3, 1)])[0])
        return matmul_node(Variable(np.ones((1, 3))), hadamard_node(v, v)), [v]

    assert grad_check(build, np.ones(3)) < 1e-10


def test_grad_check_detects_wrong_gradient():
    def build(th):
        v = Variable(unflatten(th, [(2, 1)])[0])
        out = matmul_node(Variable(np.ones((1, 2))), add_node(v, v))
        v.value = v.value * 3  # forward saw the old value, finite differences see this one
        return out, [v]

    # objective sees theta itself; graph gradient is 2 per coordinate either way
    assert grad_check(build, np.ones(2), objective=lambda th: 5 * float(th.sum())) > 0.1


def test_grad_check_non_finite_objective():
    def build(th):
        v = Variable(unflatten(th, [(1, 1)])[0])
        return v, [v]

    with pytest.raises(EvaluationError):
        grad_check(build, np.ones(1), objective=lambda th: float("nan"))


def test_relative_error_floor_uses_absolute():
    assert relative_error(np.array([1e-9]), np.array([2e-9])) == pytest.approx(1e-9)
    assert relative_error(np.array([1.0]), np.array([1.0 + 1e-7])) == pytest.approx(1e-7, rel=1e-3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_checks_hold_for_random_cell_instances(seed):
    from treegrad.checks import make_chain_step

    build, theta, objective = make_chain_step(ndcore.make_rng(seed), hidden=3)
    assert grad_check(build, theta, objective=objective) < 1e-5


def test_default_run_converges():
    _, tlog = train(TrainConfig())
    loss = tlog.losses
    assert len(loss) == 1000
    assert loss[-50:].mean() < 0.1 * loss[:50].mean()
