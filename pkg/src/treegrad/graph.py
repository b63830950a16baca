"""Define-by-run reverse-mode autodiff graph.

Every operation applied to :class:`Variable` objects records a
:class:`Function` instance as the output's ``creator``.  ``backward`` walks
the creator links from an output back to the leaves.  Two guards shape that
walk:

* the branch gate: a variable consumed by ``k`` functions accumulates each
  of the ``k`` incoming contributions but only propagates further once, when
  the last one has arrived;
* the block guard: when a latest block id is given, variables tagged with an
  older block id stop the walk, so only the most recent block is traversed.
"""

import contextlib
import itertools
import threading
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .ndcore import DimensionError

PROCEED = "proceed"
DEFER = "defer"
PRUNE = "prune"

_var_ids = itertools.count(1)
_fn_ids = itertools.count(1)
_mode = threading.local()


class GraphError(RuntimeError):
    """Inconsistent graph state (double backward, bad gradient shape...)."""


def grad_enabled():
    return getattr(_mode, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate functions without recording creators or consumptions."""
    prev = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


class Variable:
    __slots__ = (
        "value",
        "grad",
        "creator",
        "forward_count",
        "block_id",
        "is_last_backward",
        "name",
        "uid",
        "_consumers",
        "_proceeded",
        "__weakref__",
    )

    def __init__(self, value, creator=None, name=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise DimensionError(f"Variable value must be 2-D, got shape {value.shape}")
        self.value = value
        self.grad = None
        self.creator = creator
        self.forward_count = 0
        self.block_id = None
        self.is_last_backward = None
        self.name = name
        self.uid = next(_var_ids)
        self._consumers = 0
        self._proceeded = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return self.creator is None

    def __repr__(self):
        label = self.name or f"v{self.uid}"
        return f"Variable({label}, shape={self.value.shape})"


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward(*values)`` returning a tensor and
    ``backward(grad)`` returning one gradient per input.  Anything needed
    by backward goes into ``self.saved``.
    """

    kind = "function"

    def __init__(self):
        self.inputs = ()
        self.saved = {}
        self.output_shape = None
        self.uid = next(_fn_ids)

    def forward(self, *values):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        fn = cls(**kwargs)
        out = fn.forward(*(v.value for v in inputs))
        if not grad_enabled():
            return Variable(out)
        if not inputs:
            raise GraphError(f"{cls.kind} needs at least one input")
        fn.inputs = tuple(inputs)
        fn.output_shape = out.shape
        for v in inputs:
            register_consumption(v)
        return Variable(out, creator=fn)

    def __repr__(self):
        return f"{type(self).__name__}#{self.uid}"


@dataclass
class TraversalTrace:
    """Counters filled in by one backward call."""

    visits: Counter = field(default_factory=Counter)
    executions: Counter = field(default_factory=Counter)
    pruned: Counter = field(default_factory=Counter)
    events: list = field(default_factory=list)

    def _log(self, event, node_id, kind, count):
        self.events.append((event, node_id, kind, count))

    def visit(self, v):
        self.visits[v] += 1
        self._log("visit", f"v{v.uid}", "variable", self.visits[v])

    def execute(self, fn):
        self.executions[fn] += 1
        self._log("backward", f"f{fn.uid}", fn.kind, self.executions[fn])

    def prune(self, v):
        self.pruned[v] += 1
        self._log("prune", f"v{v.uid}", "variable", self.pruned[v])

    def dump(self):
        lines = ["event,node_id,kind,count"]
        lines += [",".join(map(str, e)) for e in self.events]
        return "\n".join(lines) + "\n"


def register_consumption(v):
    v._consumers += 1
    v.forward_count += 1


def branch_gate(v):
    if v.forward_count == 0:
        if v._proceeded:
            raise GraphError(f"{v!r} received a gradient after it already propagated")
        v._proceeded = True
        return PROCEED
    v.forward_count -= 1
    if v.forward_count != 0:
        return DEFER
    v._proceeded = True
    return PROCEED


def block_guard(v, latest_block):
    v.is_last_backward = v.block_id == latest_block
    return PROCEED if v.is_last_backward else PRUNE


def _accumulate(v, g):
    if g.shape != v.value.shape:
        raise GraphError(f"gradient shape {g.shape} does not match {v!r}")
    if v.grad is None:
        v.grad = np.array(g, dtype=np.float64)
    else:
        v.grad += g


def backward(v, seed=None, trace=None, latest_block=None):
    """Propagate ``seed`` from ``v`` to every variable it depends on.

    With ``latest_block`` set, variables carrying any other block id are
    pruned.  Returns the trace (a fresh one if none was passed).
    """
    if trace is None:
        trace = TraversalTrace()
    if seed is None:
        seed = np.ones_like(v.value)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != v.value.shape:
        raise DimensionError(f"seed shape {seed.shape} does not match {v!r}")

    trace.visit(v)
    if latest_block is not None and v.block_id is not None:
        if block_guard(v, latest_block) == PRUNE:
            trace.prune(v)
            return trace
    _accumulate(v, seed)
    v._proceeded = True

    stack = [v] if v.creator is not None else []
    while stack:
        var = stack.pop()
        fn = var.creator
        grads = fn.backward(var.grad)
        trace.execute(fn)
        if len(grads) != len(fn.inputs):
            raise GraphError(f"{fn!r} returned {len(grads)} gradients for {len(fn.inputs)} inputs")
        for inp, g in zip(fn.inputs, grads):
            trace.visit(inp)
            if latest_block is not None and inp.block_id is not None:
                if block_guard(inp, latest_block) == PRUNE:
                    trace.prune(inp)
                    continue
            _accumulate(inp, g)
            if branch_gate(inp) == PROCEED and inp.creator is not None:
                stack.append(inp)
    return trace


def iter_reachable(roots):
    """Yield every variable reachable from ``roots`` through creator links once."""
    seen = set()
    stack = list(roots)
    while stack:
        v = stack.pop()
        if id(v) in seen:
            continue
        seen.add(id(v))
        yield v
        if v.creator is not None:
            stack.extend(v.creator.inputs)


def count_reachable(roots):
    return sum(1 for _ in iter_reachable(roots))


def zero_grads(roots):
    for v in iter_reachable(roots):
        v.grad = None
        v.forward_count = v._consumers
        v._proceeded = False
        v.is_last_backward = None


def reset_leaf(v):
    """Forget every consumer of a leaf (used when its consumers are dropped)."""
    v.grad = None
    v._consumers = 0
    v.forward_count = 0
    v._proceeded = False
    v.is_last_backward = None


def release_graph(model):
    """Drop every function node and intermediate variable held by ``model``.

    ``model`` must provide ``parameters()`` and ``drop_graph()``; parameter
    leaves keep their values but lose their consumer bookkeeping.
    """
    model.drop_graph()
    for p in model.parameters():
        reset_leaf(p)
