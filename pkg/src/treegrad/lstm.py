"""Chain LSTM with peepholes and the binary-tree (S-LSTM) memory block.

Both cells are plain compositions of graph functions, so gradients come
from the autodiff engine.  ``chain_lstm_deltas`` is the closed-form
single-step backward used only as an independent check.
"""

from dataclasses import dataclass, fields

import numpy as np

from . import ndcore
from .functions import (
    add_all,
    add_node,
    hadamard_node,
    linear,
    matmul_node,
    sigmoid_node,
    tanh_node,
)
from .graph import Variable
from .ndcore import DimensionError

AS_PRINTED = "as_printed"
SYMMETRIC = "symmetric"
CELL_VARIANTS = (AS_PRINTED, SYMMETRIC)


class ParamSet:
    """Mixin for dataclasses whose fields are all parameter Variables."""

    def parameters(self):
        return [getattr(self, f.name) for f in fields(self)]

    def named_parameters(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def clone(self):
        """Fresh leaves holding copies of the current values."""
        return type(self)(
            **{name: Variable(p.value.copy(), name=name) for name, p in self.named_parameters()}
        )

    @classmethod
    def _build(cls, shapes, rng, scale):
        kwargs = {}
        for f in fields(cls):
            rows, cols = shapes[f.name]
            if rng is None:
                value = ndcore.zeros(rows, cols)
            else:
                value = ndcore.rand_init(rows, cols, scale, rng)
            kwargs[f.name] = Variable(value, name=f.name)
        return cls(**kwargs)


@dataclass
class LstmState:
    c: Variable
    h: Variable

    def __post_init__(self):
        if self.c.shape != self.h.shape:
            raise DimensionError(f"state c {self.c.shape} and h {self.h.shape} differ")

    @classmethod
    def zeros(cls, hidden):
        return cls(Variable(ndcore.zeros(hidden, 1)), Variable(ndcore.zeros(hidden, 1)))

    @classmethod
    def from_values(cls, c, h):
        return cls(Variable(np.array(c, dtype=np.float64)), Variable(np.array(h, dtype=np.float64)))


@dataclass
class LstmStepTrace:
    """Intermediate gate variables of one cell application."""

    c: Variable
    h: Variable
    f: Variable = None
    i: Variable = None
    g: Variable = None
    o: Variable = None
    f_left: Variable = None
    f_right: Variable = None
    x: Variable = None


@dataclass
class DeltaSet:
    do: np.ndarray
    dc: np.ndarray
    df: np.ndarray
    dc_prev: np.ndarray
    di: np.ndarray
    dg: np.ndarray


# -- chain LSTM ---------------------------------------------------------------


@dataclass
class ChainLstmParams(ParamSet):
    W_fh: Variable
    W_fx: Variable
    P_f: Variable
    b_f: Variable
    W_i: Variable
    U_i: Variable
    P_i: Variable
    b_i: Variable
    W_g: Variable
    U_g: Variable
    b_g: Variable
    W_o: Variable
    U_o: Variable
    P_o: Variable
    b_o: Variable

    @classmethod
    def init(cls, input_dim, hidden, rng=None, scale=0.08):
        """Uniform(-scale, scale) init; all zeros when ``rng`` is None."""
        sq, inp, vec = (hidden, hidden), (hidden, input_dim), (hidden, 1)
        shapes = dict(
            W_fh=sq, W_fx=inp, P_f=vec, b_f=vec,
            W_i=inp, U_i=sq, P_i=vec, b_i=vec,
            W_g=inp, U_g=sq, b_g=vec,
            W_o=inp, U_o=sq, P_o=vec, b_o=vec,
        )  # fmt: skip
        return cls._build(shapes, rng, scale)


def chain_lstm_step(p, x, prev):
    h0, c0 = prev.h, prev.c
    if x.shape != (p.W_fx.shape[1], 1) or h0.shape != (p.W_fh.shape[0], 1):
        raise DimensionError(f"chain step got x {x.shape}, h {h0.shape}")
    f = sigmoid_node(add_all([matmul_node(p.W_fh, h0), linear(p.W_fx, x, p.b_f), hadamard_node(p.P_f, c0)]))
    i = sigmoid_node(add_all([linear(p.W_i, x, p.b_i), matmul_node(p.U_i, h0), hadamard_node(p.P_i, c0)]))
    g = tanh_node(add_node(linear(p.W_g, x, p.b_g), matmul_node(p.U_g, h0)))
    c = add_node(hadamard_node(i, g), hadamard_node(f, c0))
    o = sigmoid_node(add_all([linear(p.W_o, x, p.b_o), matmul_node(p.U_o, h0), hadamard_node(p.P_o, c)]))
    h = hadamard_node(o, tanh_node(c))
    return LstmState(c, h), LstmStepTrace(c=c, h=h, f=f, i=i, g=g, o=o)


def chain_lstm_deltas(trace, prev_c, dh):
    """Closed-form one-step deltas given the gradient arriving at h_t.

    Peephole paths are not included, so these agree with autodiff only
    when the peephole weights are zero.
    """
    c = trace.c.value
    prev_c = np.asarray(prev_c, dtype=np.float64)
    tc = np.tanh(c)
    do = tc * dh
    dc = (1.0 - tc * tc) * trace.o.value * dh
    return DeltaSet(
        do=do,
        dc=dc,
        df=prev_c * dc,
        dc_prev=trace.f.value * dc,
        di=trace.g.value * dc,
        dg=trace.i.value * dc,
    )


# -- S-LSTM -------------------------------------------------------------------


@dataclass
class SLstmParams(ParamSet):
    W_hi_l: Variable
    W_hi_r: Variable
    W_ci_l: Variable
    W_ci_r: Variable
    b_i: Variable
    W_hfl_l: Variable
    W_hfl_r: Variable
    W_cfl_l: Variable
    W_cfl_r: Variable
    b_fl: Variable
    W_hfr_l: Variable
    W_hfr_r: Variable
    W_cfr_l: Variable
    W_cfr_r: Variable
    b_fr: Variable
    W_hx_l: Variable
    W_hx_r: Variable
    b_x: Variable
    W_ho_l: Variable
    W_ho_r: Variable
    W_co: Variable
    b_o: Variable

    @classmethod
    def init(cls, hidden, rng=None, scale=0.08):
        shapes = {
            f.name: (hidden, 1) if f.name.startswith("b_") else (hidden, hidden)
            for f in fields(cls)
        }
        return cls._build(shapes, rng, scale)


def _affine(pairs, bias):
    (W0, v0), rest = pairs[0], pairs[1:]
    return add_all([linear(W0, v0, bias)] + [matmul_node(W, v) for W, v in rest])


def slstm_step(p, left, right, variant=AS_PRINTED):
    """Combine a left and right child state into their parent state."""
    if variant not in CELL_VARIANTS:
        raise ValueError(f"unknown cell-update variant {variant!r}")
    hl, cl, hr, cr = left.h, left.c, right.h, right.c
    if hl.shape != hr.shape or hl.shape != p.b_i.shape:
        raise DimensionError(f"child states {hl.shape}, {hr.shape} vs hidden {p.b_i.shape}")

    i = sigmoid_node(_affine([(p.W_hi_l, hl), (p.W_hi_r, hr), (p.W_ci_l, cl), (p.W_ci_r, cr)], p.b_i))
    f_l = sigmoid_node(_affine([(p.W_hfl_l, hl), (p.W_hfl_r, hr), (p.W_cfl_l, cl), (p.W_cfl_r, cr)], p.b_fl))
    f_r = sigmoid_node(_affine([(p.W_hfr_l, hl), (p.W_hfr_r, hr), (p.W_cfr_l, cl), (p.W_cfr_r, cr)], p.b_fr))
    x = _affine([(p.W_hx_l, hl), (p.W_hx_r, hr)], p.b_x)
    candidate = tanh_node(x)
    if variant == AS_PRINTED:
        c = add_node(hadamard_node(f_l, cl), hadamard_node(hadamard_node(f_r, i), candidate))
    else:
        c = add_all([hadamard_node(f_l, cl), hadamard_node(f_r, cr), hadamard_node(i, candidate)])
    o = sigmoid_node(_affine([(p.W_ho_l, hl), (p.W_ho_r, hr), (p.W_co, c)], p.b_o))
    h = hadamard_node(o, tanh_node(c))
    return LstmState(c, h), LstmStepTrace(c=c, h=h, i=i, o=o, f_left=f_l, f_right=f_r, x=x)


def build_lstm_tree(p, leaf_states, variant=AS_PRINTED):
    """Left-leaning fold ``((s1, s2), s3), ...`` of child states.

    Returns the root state and its ``h`` variable.
    """
    leaf_states = list(leaf_states)
    if not leaf_states:
        raise ValueError("build_lstm_tree needs at least one leaf state")
    state = leaf_states[0]
    for right in leaf_states[1:]:
        state, _ = slstm_step(p, state, right, variant)
    return state, state.h
