"""Dense 2-D float64 tensors and the handful of kernels the graph needs.

A tensor here is simply a C-contiguous ``numpy.ndarray`` of ndim 2 and
dtype float64.  The helpers below add the shape checks and error messages
the rest of the package relies on; they never mutate their arguments.
"""

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def tensor(data, rows=None, cols=None):
    """Build a 2-D float64 tensor from nested sequences or a flat buffer."""
    arr = np.array(data, dtype=np.float64)
    if rows is not None or cols is not None:
        arr = arr.reshape(rows if rows is not None else -1, cols if cols is not None else -1)
    elif arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"expected a non-empty 2-D tensor, got shape {arr.shape}")
    return arr


def zeros(rows, cols):
    return np.zeros((rows, cols))


def ones(rows, cols):
    return np.ones((rows, cols))


def eye(n):
    return np.eye(n)


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise DimensionError(f"{what} shape mismatch: {a.shape} vs {b.shape}")


_EW = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def ew(a, b, kind):
    """Exact-shape elementwise ``add``, ``sub`` or ``mul`` (no broadcasting)."""
    _check_same(a, b, kind)
    return _EW[kind](a, b)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _one_minus_sq_tanh(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _sigmoid_deriv(x):
    s = sigmoid(x)
    return s * (1.0 - s)


_MAPS = {
    "tanh": np.tanh,
    "sigmoid": sigmoid,
    "one_minus_sq_tanh": _one_minus_sq_tanh,
    "sigmoid_deriv": _sigmoid_deriv,
}


def map(a, kind):  # noqa: A001 - mirrors the operation name
    """Apply an elementwise nonlinearity or its derivative."""
    try:
        fn = _MAPS[kind]
    except KeyError:
        raise ValueError(f"unknown map kind {kind!r}") from None
    return fn(a)


def make_rng(seed):
    """The single RNG type used everywhere: PCG64 seeded with a 64-bit int."""
    return np.random.Generator(np.random.PCG64(seed))


def rand_init(rows, cols, scale, rng):
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return rng.uniform(-scale, scale, size=(rows, cols))
