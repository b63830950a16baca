"""Differentiable operations and batch standardization."""

from dataclasses import dataclass

import numpy as np

from . import ndcore
from .graph import Function, Variable
from .ndcore import DimensionError


class Linear(Function):
    kind = "linear"

    def forward(self, W, x, b):
        out = ndcore.matmul(W, x)
        if b.shape != out.shape:
            raise DimensionError(f"linear bias shape {b.shape} does not match output {out.shape}")
        self.saved["W"] = W
        self.saved["x"] = x
        return out + b

    def backward(self, g):
        W, x = self.saved["W"], self.saved["x"]
        return g @ x.T, W.T @ g, g


class MatMul(Function):
    kind = "matmul"

    def forward(self, W, x):
        self.saved["W"] = W
        self.saved["x"] = x
        return ndcore.matmul(W, x)

    def backward(self, g):
        return g @ self.saved["x"].T, self.saved["W"].T @ g


class Tanh(Function):
    kind = "tanh"

    def forward(self, x):
        y = ndcore.map(x, "tanh")
        self.saved["y"] = y
        return y

    def backward(self, g):
        y = self.saved["y"]
        return (g * (1.0 - y * y),)


class Sigmoid(Function):
    kind = "sigmoid"

    def forward(self, x):
        y = ndcore.map(x, "sigmoid")
        self.saved["y"] = y
        return y

    def backward(self, g):
        y = self.saved["y"]
        return (g * y * (1.0 - y),)


class Add(Function):
    kind = "add"

    def forward(self, a, b):
        return ndcore.ew(a, b, "add")

    def backward(self, g):
        return g, g


class Hadamard(Function):
    kind = "hadamard"

    def forward(self, a, b):
        self.saved["a"] = a
        self.saved["b"] = b
        return ndcore.ew(a, b, "mul")

    def backward(self, g):
        return g * self.saved["b"], g * self.saved["a"]


class MSE(Function):
    kind = "mse"

    def __init__(self, target):
        super().__init__()
        self.target = np.asarray(target, dtype=np.float64)

    def forward(self, pred):
        if pred.shape != self.target.shape:
            raise DimensionError(f"mse shape mismatch: {pred.shape} vs target {self.target.shape}")
        diff = pred - self.target
        self.saved["diff"] = diff
        return np.array([[np.mean(diff * diff)]])

    def backward(self, g):
        diff = self.saved["diff"]
        return (2.0 / diff.size * diff * g[0, 0],)


class SumLoss(Function):
    kind = "sum_loss"

    def forward(self, *losses):
        for loss in losses:
            if loss.shape != (1, 1):
                raise DimensionError(f"sum_loss expects scalars, got {loss.shape}")
        return np.array([[sum(float(loss[0, 0]) for loss in losses)]])

    def backward(self, g):
        return tuple(g for _ in self.inputs)


def linear(W, x, b):
    return Linear.apply(W, x, b)


def matmul_node(W, x):
    return MatMul.apply(W, x)


def tanh_node(x):
    return Tanh.apply(x)


def sigmoid_node(x):
    return Sigmoid.apply(x)


def add_node(a, b):
    return Add.apply(a, b)


def hadamard_node(a, b):
    return Hadamard.apply(a, b)


def mse_node(pred, target):
    return MSE.apply(pred, target=target)


def sum_loss_node(losses):
    losses = list(losses)
    if not losses:
        raise ValueError("sum_loss_node needs at least one loss")
    return SumLoss.apply(*losses)


def add_all(terms):
    """Left fold of ``add_node`` over a non-empty sequence."""
    terms = list(terms)
    acc = terms[0]
    for t in terms[1:]:
        acc = add_node(acc, t)
    return acc


def constant(value, name=None):
    return Variable(ndcore.tensor(value), name=name)


# -- batch standardization ---------------------------------------------------


@dataclass(frozen=True)
class BatchStats:
    mean: np.ndarray
    variance: np.ndarray
    m: int
    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def batch_stats(batch, epsilon=1e-5):
    """Per-feature mean and population variance; rows are samples."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] < 1:
        raise DimensionError(f"batch must be 2-D with at least one row, got {batch.shape}")
    # shifted mean: exact for constant columns
    shift = batch[:1]
    mean = shift + (batch - shift).mean(axis=0, keepdims=True)
    dev = batch - mean
    variance = (dev * dev).mean(axis=0, keepdims=True)
    return BatchStats(mean, variance, batch.shape[0], epsilon)


def standardize(batch, stats):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[1] != stats.mean.shape[1]:
        raise DimensionError(
            f"batch has {batch.shape[1]} features, stats have {stats.mean.shape[1]}"
        )
    return (batch - stats.mean) / np.sqrt(stats.variance + stats.epsilon)
