"""Flat-parameter graph recipes for finite-difference gradient checks.

Each ``make_*`` returns ``(builder, theta)`` for ``trainer.grad_check``;
the cell recipes add a third item, an independent long double objective.
The scalar objective is a fixed random projection of the operation's
output, so every output element contributes to the gradient.
"""

import numpy as np

from . import functions as F
from . import ndcore
from .graph import Variable
from .lstm import (
    ChainLstmParams,
    LstmState,
    SLstmParams,
    build_lstm_tree,
    chain_lstm_step,
    slstm_step,
)
from .trainer import grad_check, unflatten


def _project(out, weights):
    r, c = out.shape
    weighted = F.hadamard_node(out, Variable(weights))
    return F.matmul_node(F.matmul_node(Variable(np.ones((1, r))), weighted), Variable(np.ones((c, 1))))


def _from_shapes(shapes, rng, op, scale=1.0):
    theta = rng.normal(scale=scale, size=sum(r * c for r, c in shapes))
    out_shape = op(*[Variable(v) for v in unflatten(theta, shapes)]).shape
    weights = rng.normal(size=out_shape)

    def build(th):
        leaves = [Variable(v) for v in unflatten(th, shapes)]
        return _project(op(*leaves), weights), leaves

    return build, theta


def make_linear(rng, n=3):
    return _from_shapes([(n, n), (n, 1), (n, 1)], rng, F.linear)


def make_matmul(rng, n=3):
    return _from_shapes([(n, n), (n, 2)], rng, F.matmul_node)


def make_tanh(rng, n=4):
    return _from_shapes([(n, 1)], rng, F.tanh_node)


def make_sigmoid(rng, n=4):
    return _from_shapes([(n, 1)], rng, F.sigmoid_node)


def make_add(rng, n=4):
    return _from_shapes([(n, 1), (n, 1)], rng, F.add_node)


def make_hadamard(rng, n=4):
    return _from_shapes([(n, 1), (n, 1)], rng, F.hadamard_node)


def make_mse(rng, n=4):
    target = rng.normal(size=(n, 1))

    def build(th):
        (x,) = [Variable(v) for v in unflatten(th, [(n, 1)])]
        return F.mse_node(x, target), [x]

    return build, rng.normal(size=n)


def make_sum_loss(rng, k=3):
    def build(th):
        leaves = [Variable(v) for v in unflatten(th, [(1, 1)] * k)]
        squares = [F.hadamard_node(v, v) for v in leaves]
        return F.sum_loss_node(squares), leaves

    return build, rng.normal(size=k)


# Straight-line references for the cells.  They are dtype-generic numpy code
# sharing nothing with the graph, and run in long double for the differences.


def _sig(z):
    return 1 / (1 + np.exp(-z))


def chain_step_reference(params, x, c0, h0):
    (W_fh, W_fx, P_f, b_f, W_i, U_i, P_i, b_i, W_g, U_g, b_g, W_o, U_o, P_o, b_o) = params
    f = _sig(W_fh @ h0 + W_fx @ x + b_f + P_f * c0)
    i = _sig(W_i @ x + b_i + U_i @ h0 + P_i * c0)
    g = np.tanh(W_g @ x + b_g + U_g @ h0)
    c = i * g + f * c0
    o = _sig(W_o @ x + b_o + U_o @ h0 + P_o * c)
    return c, o * np.tanh(c)


def slstm_step_reference(params, cl, hl, cr, hr, variant="as_printed"):
    (W_hi_l, W_hi_r, W_ci_l, W_ci_r, b_i,
     W_hfl_l, W_hfl_r, W_cfl_l, W_cfl_r, b_fl,
     W_hfr_l, W_hfr_r, W_cfr_l, W_cfr_r, b_fr,
     W_hx_l, W_hx_r, b_x, W_ho_l, W_ho_r, W_co, b_o) = params
    i = _sig(W_hi_l @ hl + W_hi_r @ hr + W_ci_l @ cl + W_ci_r @ cr + b_i)
    f_l = _sig(W_hfl_l @ hl + W_hfl_r @ hr + W_cfl_l @ cl + W_cfl_r @ cr + b_fl)
    f_r = _sig(W_hfr_l @ hl + W_hfr_r @ hr + W_cfr_l @ cl + W_cfr_r @ cr + b_fr)
    cand = np.tanh(W_hx_l @ hl + W_hx_r @ hr + b_x)
    if variant == "as_printed":
        c = f_l * cl + f_r * i * cand
    else:
        c = f_l * cl + f_r * cr + i * cand
    o = _sig(W_ho_l @ hl + W_ho_r @ hr + W_co @ c + b_o)
    return c, o * np.tanh(c)


def _shapes_of(param_cls, *args):
    params = param_cls.init(*args)
    return [p.shape for p in params.parameters()]


def make_chain_step(rng, hidden=4, input_dim=2):
    p_shapes = _shapes_of(ChainLstmParams, input_dim, hidden)
    shapes = p_shapes + [(input_dim, 1), (hidden, 1), (hidden, 1)]
    weights = rng.normal(size=(hidden, 1))
    weights_c = rng.normal(size=(hidden, 1))
    theta = rng.normal(scale=0.5, size=sum(r * c for r, c in shapes))

    def build(th):
        leaves = [Variable(v) for v in unflatten(th, shapes)]
        params = ChainLstmParams(*leaves[: len(p_shapes)])
        x, c0, h0 = leaves[len(p_shapes):]
        state, _ = chain_lstm_step(params, x, LstmState(c0, h0))
        out = F.add_node(F.matmul_node(Variable(weights.T), state.h), F.matmul_node(Variable(weights_c.T), state.c))
        return out, leaves

    def objective(th):
        vals = unflatten(th, shapes)
        x, c0, h0 = vals[len(p_shapes):]
        c, h = chain_step_reference(vals[: len(p_shapes)], x, c0, h0)
        return (weights.T @ h + weights_c.T @ c)[0, 0]

    return build, theta, objective


def make_slstm_step(rng, hidden=4, variant="as_printed"):
    p_shapes = _shapes_of(SLstmParams, hidden)
    shapes = p_shapes + [(hidden, 1)] * 4
    weights = rng.normal(size=(hidden, 1))
    theta = rng.normal(scale=0.5, size=sum(r * c for r, c in shapes))

    def build(th):
        leaves = [Variable(v) for v in unflatten(th, shapes)]
        params = SLstmParams(*leaves[: len(p_shapes)])
        cl, hl, cr, hr = leaves[len(p_shapes):]
        state, _ = slstm_step(params, LstmState(cl, hl), LstmState(cr, hr), variant)
        return F.matmul_node(Variable(weights.T), state.h), leaves

    def objective(th):
        vals = unflatten(th, shapes)
        c, h = slstm_step_reference(vals[: len(p_shapes)], *vals[len(p_shapes):], variant=variant)
        return (weights.T @ h)[0, 0]

    return build, theta, objective


def make_tree(rng, hidden=4, n_leaves=4):
    p_shapes = _shapes_of(SLstmParams, hidden)
    shapes = p_shapes + [(hidden, 1)] * (2 * n_leaves)
    weights = rng.normal(size=(hidden, 1))
    theta = rng.normal(scale=0.5, size=sum(r * c for r, c in shapes))

    def build(th):
        leaves = [Variable(v) for v in unflatten(th, shapes)]
        params = SLstmParams(*leaves[: len(p_shapes)])
        rest = leaves[len(p_shapes):]
        states = [LstmState(rest[2 * j], rest[2 * j + 1]) for j in range(n_leaves)]
        _, h = build_lstm_tree(params, states)
        return F.matmul_node(Variable(weights.T), h), leaves

    return build, theta


FUNCTION_KINDS = {
    "linear": make_linear,
    "matmul": make_matmul,
    "tanh": make_tanh,
    "sigmoid": make_sigmoid,
    "add": make_add,
    "hadamard": make_hadamard,
    "mse": make_mse,
    "sum_loss": make_sum_loss,
}

CELLS = {
    "chain_lstm_step": make_chain_step,
    "slstm_step": make_slstm_step,
}


def max_errors(n_instances=20, seed=0, epsilon=1e-6):
    """Worst finite-difference error per function kind and per cell."""
    rng = ndcore.make_rng(seed)
    out = {}
    for name, make in {**FUNCTION_KINDS, **CELLS}.items():
        worst = 0.0
        for _ in range(n_instances):
            build, theta, *objective = make(rng)
            err = grad_check(build, theta, epsilon=epsilon, objective=objective[0] if objective else None)
            worst = max(worst, err)
        out[name] = worst
    return out
