"""Define-by-run autodiff with branch-gated, latest-block-constrained backward,
and block-chained tree-LSTM training on a sine wave."""

from .graph import Variable, backward, no_grad, zero_grads
from .model import BlockChain, DivergenceError, ModelParams
from .trainer import TrainConfig, predict, sweep, train

__all__ = [
    "BlockChain",
    "DivergenceError",
    "ModelParams",
    "TrainConfig",
    "Variable",
    "backward",
    "no_grad",
    "predict",
    "sweep",
    "train",
    "zero_grads",
]
