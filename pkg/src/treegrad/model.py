"""Block-chained tree-LSTM training model.

Each training step appends one block to the chain::

    standardized inputs -> leaf states -> LSTM tree -> linear head -> tanh -> MSE

The block's loss joins a running sum over every block appended since the
last reset, and the tree root state is carried into the next block.
Backward starts at the running sum but only traverses the newest block;
older blocks are cut off at their tagged boundary variables.  Every
``intvl`` steps the carried state is zeroed and the whole chain is dropped.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ndcore
from .functions import batch_stats, constant, linear, mse_node, standardize, sum_loss_node, tanh_node
from .graph import (
    Variable,
    backward,
    count_reachable,
    iter_reachable,
    no_grad,
    release_graph,
    zero_grads,
)
from .lstm import AS_PRINTED, CELL_VARIANTS, LstmState, SLstmParams, build_lstm_tree


class DivergenceError(ArithmeticError):
    """A training step produced a non-finite loss."""

    def __init__(self, step, value=None):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step
        self.value = value
        self.log = None


class ChainStateError(RuntimeError):
    pass


@dataclass
class ModelParams:
    tree: SLstmParams
    lift_W: Variable
    lift_b: Variable
    head_W: Variable
    head_b: Variable

    @classmethod
    def init(cls, hidden, rng, scale=0.08):
        def leaf(rows, cols, name):
            return Variable(ndcore.rand_init(rows, cols, scale, rng), name=name)

        tree = SLstmParams.init(hidden, rng, scale)
        return cls(
            tree=tree,
            lift_W=leaf(hidden, 1, "lift_W"),
            lift_b=leaf(hidden, 1, "lift_b"),
            head_W=leaf(1, hidden, "head_W"),
            head_b=leaf(1, 1, "head_b"),
        )

    @property
    def hidden(self):
        return self.lift_W.shape[0]

    def named_parameters(self):
        named = [(f"tree.{n}", p) for n, p in self.tree.named_parameters()]
        named += [(n, getattr(self, n)) for n in ("lift_W", "lift_b", "head_W", "head_b")]
        return named

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def clone(self):
        return ModelParams(
            tree=self.tree.clone(),
            **{n: Variable(getattr(self, n).value.copy(), name=n)
               for n in ("lift_W", "lift_b", "head_W", "head_b")},
        )

    def dump(self):
        """Flat text dump: one ``name rows cols v1 v2 ...`` line per tensor."""
        lines = []
        for name, p in self.named_parameters():
            r, c = p.shape
            lines.append(" ".join([name, str(r), str(c)] + [repr(float(x)) for x in p.value.ravel()]))
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text):
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            name, rows, cols, *data = line.split()
            values[name] = np.array([float(x) for x in data]).reshape(int(rows), int(cols))
        tree = SLstmParams(**{
            n[len("tree."):]: Variable(v, name=n[len("tree."):]) for n, v in values.items() if n.startswith("tree.")
        })
        return cls(tree=tree, **{n: Variable(values[n], name=n) for n in ("lift_W", "lift_b", "head_W", "head_b")})


@dataclass
class Block:
    block_id: int
    root: LstmState
    loss: Variable
    carried_in: tuple  # (c, h) tensors the block started from


def _build_block(params, carried, window, seq_len, epsilon, variant):
    """Forward one block; returns (root state, prediction variable)."""
    window = ndcore.tensor(window)
    std = standardize(window, batch_stats(window, epsilon))
    leaves = []
    for x in std[-seq_len:, 0]:
        h = linear(params.lift_W, constant([[x]]), params.lift_b)
        c = constant(ndcore.zeros(params.hidden, 1))
        leaves.append(LstmState(c, h))
    root, root_h = build_lstm_tree(params.tree, [carried] + leaves, variant)
    pred = tanh_node(linear(params.head_W, root_h, params.head_b))
    return root, pred


@dataclass
class BlockChain:
    params: ModelParams
    intvl: int = 10
    seq_len: int = 4
    batch_m: int = None
    epsilon: float = 1e-5
    variant: str = AS_PRINTED
    clip: float = None
    blocks: list = field(default_factory=list)
    running_loss: Variable = None
    carried_state: LstmState = None
    steps_since_reset: int = 0
    _next_block_id: int = 1

    def __post_init__(self):
        if self.intvl < 1 or self.seq_len < 1:
            raise ValueError("intvl and seq_len must be positive")
        if self.batch_m is None:
            self.batch_m = self.seq_len
        if self.batch_m < self.seq_len:
            raise ValueError("batch_m must be at least seq_len")
        if self.variant not in CELL_VARIANTS:
            raise ValueError(f"unknown cell-update variant {self.variant!r}")

    def parameters(self):
        return self.params.parameters()

    def drop_graph(self):
        self.blocks = []
        self.running_loss = None
        self.carried_state = None

    def _carried(self):
        if self.carried_state is None:
            return LstmState.zeros(self.params.hidden)
        return self.carried_state

    def node_count(self):
        roots = list(self.parameters())
        if self.running_loss is not None:
            roots.append(self.running_loss)
        if self.carried_state is not None:
            roots += [self.carried_state.c, self.carried_state.h]
        return count_reachable(roots)

    def block_functions(self, block):
        """Function nodes created for ``block`` (not those of earlier blocks)."""
        outer = {id(v) for v in self.parameters()}
        for earlier in self.blocks:
            if earlier is block:
                break
            outer.update(id(v) for v in iter_reachable([earlier.root.c, earlier.root.h]))
        fns = {}
        stack = [block.loss]
        while stack:
            v = stack.pop()
            if id(v) in outer or v.creator is None or id(v.creator) in fns:
                continue
            fns[id(v.creator)] = v.creator
            stack.extend(v.creator.inputs)
        return list(fns.values())


def append_block(chain, inputs, target):
    inputs = ndcore.tensor(inputs)
    if inputs.shape[0] < chain.seq_len:
        raise ndcore.DimensionError(
            f"block needs at least {chain.seq_len} input rows, got {inputs.shape[0]}"
        )
    carried = chain._carried()
    carried_in = (carried.c.value.copy(), carried.h.value.copy())
    root, pred = _build_block(chain.params, carried, inputs, chain.seq_len, chain.epsilon, chain.variant)
    loss = mse_node(pred, ndcore.tensor(target))

    block_id = chain._next_block_id
    chain._next_block_id += 1
    for v in (loss, root.c, root.h):
        v.block_id = block_id
    chain.blocks.append(Block(block_id, root, loss, carried_in))
    chain.running_loss = sum_loss_node([b.loss for b in chain.blocks])
    chain.carried_state = root
    chain.steps_since_reset += 1
    return loss


def constrained_backward(chain):
    """Find the newest block, then backpropagate the running loss into it only."""
    if not chain.blocks:
        raise ChainStateError("constrained_backward on a chain with no blocks")
    latest = max(b.block_id for b in chain.blocks)
    return backward(chain.running_loss, latest_block=latest)


def reset_state(chain):
    release_graph(chain)
    chain.steps_since_reset = 0


def sgd_update(params, lr, clip=None):
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        if clip is not None:
            g = np.clip(g, -clip, clip)
        # rebind rather than mutate: saved forward tensors may alias p.value
        p.value = p.value - lr * g


def train_step(chain, inputs, target, lr, step=None):
    """One append/backward/update cycle; returns (loss, elapsed seconds)."""
    t0 = time.perf_counter()
    loss = append_block(chain, inputs, target)
    value = float(loss.value[0, 0])
    if not math.isfinite(value):
        raise DivergenceError(step, value)
    constrained_backward(chain)
    sgd_update(chain.parameters(), lr, chain.clip)
    zero_grads([chain.running_loss] + chain.parameters())
    if chain.steps_since_reset >= chain.intvl:
        reset_state(chain)
    return value, time.perf_counter() - t0


def predict_step(chain, state, window):
    """Graph-free forward of one block from ``state``; returns (prediction, new state)."""
    with no_grad():
        carried = state if state is not None else LstmState.zeros(chain.params.hidden)
        root, pred = _build_block(chain.params, carried, window, chain.seq_len, chain.epsilon, chain.variant)
    return float(pred.value[0, 0]), root
