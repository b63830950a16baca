import gc

import numpy as np
import pytest

from treegrad import ndcore
from treegrad.functions import add_node, hadamard_node, linear, mse_node, sum_loss_node, tanh_node
from treegrad.graph import (
    DEFER,
    PROCEED,
    PRUNE,
    GraphError,
    TraversalTrace,
    Variable,
    backward,
    block_guard,
    branch_gate,
    count_reachable,
    no_grad,
    register_consumption,
    release_graph,
    zero_grads,
)
from treegrad.trainer import flatten, grad_check, unflatten


def leaf(values):
    return Variable(ndcore.tensor(values))


def test_register_consumption_counts():
    x = leaf([[1.0]])
    assert x.forward_count == 0
    register_consumption(x)
    assert x.forward_count == 1
    y = leaf([[1.0]])
    gates = [tanh_node(y) for _ in range(4)]
    assert len(gates) == 4 and y.forward_count == 4


def test_branch_gate_four_branches():
    x = leaf([[1.0]])
    for _ in range(4):
        register_consumption(x)
    assert [branch_gate(x) for _ in range(4)] == [DEFER, DEFER, DEFER, PROCEED]
    with pytest.raises(GraphError):
        branch_gate(x)


def test_branch_gate_single_consumer():
    x = leaf([[1.0]])
    register_consumption(x)
    assert branch_gate(x) == PROCEED


def test_shared_input_square():
    x = leaf([[0.3], [-1.5]])
    y = hadamard_node(x, x)
    trace = backward(y)
    np.testing.assert_allclose(x.grad, 2 * x.value, rtol=0, atol=0)
    assert trace.visits[x] == 2


def test_tanh_backward_at_zero():
    x = leaf([[0.0]])
    backward(tanh_node(x))
    assert x.grad[0, 0] == 1.0


def test_mse_at_minimum_has_zero_grad():
    x = leaf([[1.0], [2.0]])
    backward(mse_node(x, x.value.copy()))
    assert np.all(x.grad == 0)


def test_seed_shape_checked():
    x = leaf([[1.0], [2.0]])
    with pytest.raises(ndcore.DimensionError):
        backward(tanh_node(x), seed=np.ones((1, 1)))


def test_three_node_chain_matches_finite_differences():
    rng = ndcore.make_rng(11)
    shapes = [(3, 3), (3, 1), (3, 1)]
    theta = rng.normal(size=15)

    def build(th):
        W, x, b = (Variable(v) for v in unflatten(th, shapes))
        out = mse_node(tanh_node(linear(W, x, b)), np.full((3, 1), 0.2))
        return out, [W, x, b]

    assert grad_check(build, theta, 1e-6) < 1e-6


def test_bad_function_gradient_shape_is_reported():
    from treegrad.graph import Function

    class Broken(Function):
        kind = "broken"

        def forward(self, x):
            return x

        def backward(self, g):
            return (np.ones((5, 5)),)

    x = leaf([[1.0]])
    with pytest.raises(GraphError):
        backward(Broken.apply(x))


def _diamond(k):
    """A variable feeding k tanh branches that are summed."""
    x = leaf([[0.4], [-0.7]])
    branches = [tanh_node(hadamard_node(x, leaf([[1.0 + j], [0.5 * j]]))) for j in range(k)]
    out = branches[0]
    for b in branches[1:]:
        out = add_node(out, b)
    return x, out


@pytest.mark.parametrize("k", [2, 3, 4])
def test_exactly_once_backward(k):
    x, out = _diamond(k)
    trace = backward(out)
    assert all(n == 1 for n in trace.executions.values())
    assert trace.visits[x] == k


def test_zero_grads_restores_counters_and_is_idempotent():
    x = leaf([[0.2]])
    out = add_node(add_node(tanh_node(x), tanh_node(x)), add_node(tanh_node(x), tanh_node(x)))
    assert x.forward_count == 4
    backward(out)
    first = x.grad.copy()
    assert x.forward_count == 0
    zero_grads([out])
    assert x.grad is None and x.forward_count == 4
    backward(out)
    assert np.array_equal(x.grad, first)


def test_block_guard():
    roots = []
    for bid in (1, 2, 3):
        v = leaf([[1.0]])
        v.block_id = bid
        roots.append(v)
    assert [block_guard(v, 3) for v in roots] == [PRUNE, PRUNE, PROCEED]
    assert [v.is_last_backward for v in roots] == [False, False, True]
    single = leaf([[1.0]])
    single.block_id = 1
    assert block_guard(single, 1) == PROCEED


def test_guarded_backward_prunes_old_blocks():
    params = [leaf([[0.5]]) for _ in range(3)]
    losses = []
    for bid, p in enumerate(params, start=1):
        loss = mse_node(tanh_node(hadamard_node(p, leaf([[1.0]]))), np.zeros((1, 1)))
        loss.block_id = bid
        losses.append(loss)
    total = sum_loss_node(losses)
    trace = backward(total, latest_block=3)
    assert params[0].grad is None and params[1].grad is None
    assert params[2].grad is not None and params[2].grad[0, 0] != 0
    assert sum(trace.pruned.values()) == 2


def test_trace_dump_format():
    x = leaf([[1.0]])
    text = backward(tanh_node(x), trace=TraversalTrace()).dump()
    lines = text.strip().splitlines()
    assert lines[0] == "event,node_id,kind,count"
    assert any(",tanh,1" in line for line in lines[1:])


def test_no_grad_records_nothing():
    x = leaf([[1.0]])
    with no_grad():
        y = tanh_node(x)
    assert y.creator is None and x.forward_count == 0


class _Holder:
    def __init__(self, n):
        self.p = [leaf([[0.1 * i]]) for i in range(n)]
        self.out = None

    def build(self):
        acc = self.p[0]
        for q in self.p[1:]:
            acc = add_node(tanh_node(acc), hadamard_node(q, q))
        self.out = acc

    def parameters(self):
        return self.p

    def drop_graph(self):
        self.out = None


def test_release_graph_keeps_parameters():
    h = _Holder(3)
    h.build()
    before = [p.value.copy() for p in h.p]
    assert count_reachable([h.out] + h.p) > 3
    release_graph(h)
    assert count_reachable(h.p) == 3
    assert all(np.array_equal(a, p.value) for a, p in zip(before, h.p))
    assert all(p.forward_count == 0 for p in h.p)


def _live_variables():
    gc.collect()
    return sum(1 for o in gc.get_objects() if isinstance(o, Variable))


def test_build_release_cycles_do_not_leak():
    h = _Holder(4)
    h.build()
    release_graph(h)
    baseline = _live_variables()
    for _ in range(1000):
        h.build()
        backward(h.out)
        release_graph(h)
    assert _live_variables() <= baseline


def test_flatten_roundtrip():
    vs = [leaf([[1, 2], [3, 4]]), leaf([[5]])]
    th = flatten(vs)
    back = unflatten(th, [(2, 2), (1, 1)])
    assert np.array_equal(back[0], vs[0].value) and back[1][0, 0] == 5
