import math

import numpy as np
import pytest

from eiven import autograd as ag
from eiven.autograd import Tensor
from eiven.errors import DegenerateLossError, ShapeError

from gradcheck import numeric_grad, relative_error

RNG = np.random.default_rng(1234)


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def check_op(f, arrays, tol=1e-4, n=10):
    """Gradient-check f on n random perturbed copies of arrays."""
    for trial in range(n):
        bufs = [a + 0.1 * RNG.standard_normal(a.shape) for a in arrays]
        tensors = [t64(b) for b in bufs]
        loss = f(*tensors)
        ag.backward(loss)
        num = numeric_grad(lambda: f(*[t64(b, grad=False) for b in bufs]).item(), bufs)
        for tensor, g in zip(tensors, num):
            assert relative_error(tensor.grad, g) < tol, f"trial {trial}"


def test_matmul_identity():
    a = Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal((a @ b).data, b.data)


def test_matmul_hand_case():
    out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ag.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradcheck():
    a = RNG.standard_normal((5, 4))
    b = RNG.standard_normal((4, 3))
    w = Tensor(RNG.standard_normal((5, 3)))
    check_op(lambda x, y: ag.reduce_sum(ag.mul(x @ y, w)), [a, b])


def test_matmul_batched_gradcheck():
    a = RNG.standard_normal((3, 4, 5))
    b = RNG.standard_normal((5, 2))
    check_op(lambda x, y: ag.reduce_sum(x @ y), [a, b], n=5)


def test_silu_gate_zero_gate():
    x = np.concatenate([np.zeros((3, 4)), RNG.standard_normal((3, 4))], axis=1)
    out = ag.silu_gate(Tensor(x))
    assert np.allclose(out.data, 0.0)


def test_silu_gate_saturation():
    # SiLU(z) -> z for large z, so the gate half passes through unchanged
    out = ag.silu_gate(Tensor(np.array([[100.0, 2.0]])))
    assert np.allclose(out.data, [[200.0]], atol=1e-6)


def test_silu_gate_odd_dim():
    with pytest.raises(ShapeError):
        ag.silu_gate(Tensor(np.zeros((2, 3))))


def test_silu_gate_gradcheck():
    check_op(lambda x: ag.reduce_sum(ag.silu_gate(x)), [RNG.standard_normal((3, 8))])


def test_silu_gradcheck():
    check_op(lambda x: ag.reduce_sum(ag.silu(x)), [RNG.standard_normal((4, 6))])


def test_cross_entropy_uniform():
    logits = t64(np.zeros((1, 259)))
    loss = ag.cross_entropy_masked(logits, np.array([7]), np.array([True]))
    assert loss.item() == pytest.approx(math.log(259), rel=1e-6)


def test_cross_entropy_saturated():
    logits = np.zeros((1, 10))
    logits[0, 3] = 1e4
    loss = ag.cross_entropy_masked(t64(logits), np.array([3]), np.array([True]))
    assert loss.item() == pytest.approx(0.0, abs=1e-6)


def test_cross_entropy_brute_force():
    logits = RNG.standard_normal((4, 10))
    targets = RNG.integers(0, 10, size=4)
    mask = np.array([True, False, True, True])
    loss = ag.cross_entropy_masked(t64(logits), targets, mask)

    total = 0.0
    n = 0
    for t in range(4):
        if not mask[t]:
            continue
        exps = [math.exp(v) for v in logits[t]]
        p = exps[targets[t]] / sum(exps)
        total += -math.log(p)
        n += 1
    assert loss.item() == pytest.approx(total / n, abs=1e-6)


def test_cross_entropy_unmasked_positions_no_gradient():
    logits = t64(RNG.standard_normal((3, 5)))
    mask = np.array([True, False, True])
    loss = ag.cross_entropy_masked(logits, np.array([0, 1, 2]), mask)
    ag.backward(loss)
    assert np.all(logits.grad[1] == 0.0)
    assert np.any(logits.grad[0] != 0.0)


def test_cross_entropy_all_false_mask():
    with pytest.raises(DegenerateLossError):
        ag.cross_entropy_masked(t64(np.zeros((2, 4))), np.zeros(2, dtype=int), np.zeros(2, dtype=bool))


def test_cross_entropy_gradcheck():
    targets = RNG.integers(0, 10, size=6)
    mask = np.array([True, True, False, True, False, True])
    check_op(
        lambda x: ag.cross_entropy_masked(x, targets, mask),
        [RNG.standard_normal((6, 10))],
    )


def test_cross_entropy_batched_matches_rowwise_mean():
    logits = RNG.standard_normal((3, 5, 7))
    targets = RNG.integers(0, 7, size=(3, 5))
    mask = RNG.random((3, 5)) < 0.6
    mask[:, 0] = True
    batched = ag.cross_entropy_masked(t64(logits), targets, mask).item()
    rows = [
        ag.cross_entropy_masked(t64(logits[i]), targets[i], mask[i]).item()
        for i in range(3)
    ]
    assert batched == pytest.approx(np.mean(rows), rel=1e-9)


def test_layer_norm_constant_row_gives_bias():
    gain = Tensor(np.full(8, 2.0))
    bias = Tensor(np.arange(8.0))
    out = ag.layer_norm(Tensor(np.full((3, 8), 5.0)), gain, bias)
    assert np.allclose(out.data, np.tile(np.arange(8.0), (3, 1)), atol=1e-4)


def test_layer_norm_standardized_row():
    out = ag.layer_norm(Tensor(np.array([[-1.0, 1.0]])), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-4)


def test_layer_norm_gradcheck():
    w = Tensor(RNG.standard_normal((6, 16)))
    check_op(
        lambda x, g, b: ag.reduce_sum(ag.mul(ag.layer_norm(x, g, b), w)),
        [RNG.standard_normal((6, 16)), np.ones(16), np.zeros(16)],
    )


def test_softmax_rows_sum_to_one():
    y = ag.softmax_last(Tensor(RNG.standard_normal((5, 9))))
    assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_gradcheck():
    w = RNG.standard_normal((4, 7))
    check_op(lambda x: ag.reduce_sum(ag.mul(ag.softmax_last(x), Tensor(w))), [RNG.standard_normal((4, 7))])


def test_embedding_gradcheck():
    ids = np.array([0, 2, 2, 1])
    check_op(lambda tab: ag.reduce_sum(ag.embedding(tab, ids)), [RNG.standard_normal((4, 3))])


def test_embedding_repeated_rows_accumulate():
    tab = t64(np.eye(3))
    out = ag.reduce_sum(ag.embedding(tab, np.array([1, 1, 1])))
    ag.backward(out)
    assert tab.grad[1].tolist() == [3.0, 3.0, 3.0]
    assert np.all(tab.grad[0] == 0.0)


def test_concat_narrow_gradcheck():
    def f(a, b):
        joined = ag.concat([a, b], axis=0)
        return ag.reduce_sum(ag.narrow(joined, 0, 1, 3))

    check_op(f, [RNG.standard_normal((2, 4)), RNG.standard_normal((3, 4))], n=5)


def test_backward_sum_gives_ones():
    x = t64(RNG.standard_normal((3, 4)))
    ag.backward(ag.reduce_sum(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_product_rule():
    x = t64(np.array(3.0).reshape(1, 1))
    y = t64(np.array(5.0).reshape(1, 1))
    ag.backward(ag.reduce_sum(ag.mul(x, y)))
    assert x.grad.tolist() == [[5.0]]
    assert y.grad.tolist() == [[3.0]]


def test_backward_rejects_non_scalar():
    with pytest.raises(ShapeError):
        ag.backward(t64(np.zeros((2, 2))))


def test_backward_visits_shared_node_once():
    x = t64(np.array([2.0]))
    y = ag.silu(x)
    loss = ag.reduce_sum(ag.add(y, y))
    ag.backward(loss)
    one = t64(np.array([2.0]))
    ag.backward(ag.reduce_sum(ag.silu(one)))
    assert x.grad == pytest.approx(2.0 * one.grad)


def test_frozen_tensor_never_gets_grad():
    w = Tensor(np.ones((2, 2)), frozen=True)
    x = t64(np.ones((2, 2)))
    ag.backward(ag.reduce_sum(x @ w))
    assert w.grad is None
    assert x.grad is not None


def test_frozen_cannot_require_grad():
    with pytest.raises(ValueError):
        Tensor(np.ones(2), requires_grad=True, frozen=True)


def test_determinism_same_ops_bit_identical():
    def run():
        rng = np.random.default_rng(7)
        a = Tensor(rng.standard_normal((8, 8)).astype(np.float32), requires_grad=True)
        b = Tensor(rng.standard_normal((8, 8)).astype(np.float32), requires_grad=True)
        loss = ag.reduce_sum(ag.silu(a @ b))
        ag.backward(loss)
        return loss.item(), a.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)
