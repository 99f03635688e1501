import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctvit.gradcheck import check_gradients, projection_loss
from ctvit.nn import Parameter
from ctvit.optim import Optimizer
from ctvit.tensor import (
    ShapeError, Tensor, backward, concat, exp, gelu, layer_norm, log, log_softmax,
    matmul, mean, no_grad, softmax, tanh, transpose,
)

SHAPES = [(3, 4), (2, 5), (2, 3, 4)]


def leaf(rng, *shape, low=None):
    data = rng.normal(size=shape) if low is None else rng.uniform(low, low + 1.0, size=shape)
    return Tensor(data, requires_grad=True)


# matmul ----------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), a).data, a.data)


def test_matmul_row_by_column():
    assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@pytest.mark.parametrize("sa,sb", [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((2, 1, 3), (2, 3, 2))])
def test_matmul_gradcheck(sa, sb):
    rng = np.random.default_rng(0)
    a, b = leaf(rng, *sa), leaf(rng, *sb)
    errs = check_gradients(lambda: projection_loss(matmul(a, b)), [a, b])
    assert max(errs) <= 1e-6


# elementwise -----------------------------------------------------------------

@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("op", [tanh, gelu, exp])
def test_elementwise_gradcheck(op, shape):
    x = leaf(np.random.default_rng(1), *shape)
    assert check_gradients(lambda: projection_loss(op(x)), [x])[0] <= 1e-6


@pytest.mark.parametrize("shape", SHAPES)
def test_log_gradcheck(shape):
    x = leaf(np.random.default_rng(2), *shape, low=0.5)
    assert check_gradients(lambda: projection_loss(log(x)), [x])[0] <= 1e-6


@pytest.mark.parametrize("shape", SHAPES)
def test_arithmetic_gradcheck_with_broadcast(shape):
    rng = np.random.default_rng(3)
    a, b = leaf(rng, *shape), leaf(rng, shape[-1], low=1.0)
    f = lambda: projection_loss((a * b - a / b + 2.0) * a)
    assert max(check_gradients(f, [a, b])) <= 1e-6


def test_tanh_zero():
    assert tanh(Tensor(0.0)).item() == 0.0


# softmax -----------------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_large_input_does_not_overflow():
    out = softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] == 1.0 and out[1] == 0.0


def test_softmax_values_match_direct_evaluation():
    z = sum(math.exp(v) for v in (1, 2, 3))
    expected = [math.exp(v) / z for v in (1, 2, 3)]
    got = softmax(Tensor([1.0, 2.0, 3.0])).data
    np.testing.assert_allclose(got, expected, rtol=1e-14)
    np.testing.assert_allclose(got, [0.09003, 0.24473, 0.66524], atol=5e-6)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
           elements=st.floats(-50, 50)),
    st.floats(-100, 100),
)
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    out = softmax(Tensor(x), axis=-1).data
    assert np.all((out >= 0) & (out <= 1))
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(Tensor(x + c), axis=-1).data, out, atol=1e-12)


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("op", [softmax, log_softmax])
def test_softmax_gradcheck(op, shape):
    x = leaf(np.random.default_rng(4), *shape)
    assert check_gradients(lambda: projection_loss(op(x, axis=-1)), [x])[0] <= 1e-6


# layer norm ----------------------------------------------------------------------

def test_layer_norm_example():
    x = Tensor([1.0, 2.0, 3.0])
    out = layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-6).data
    var = 2.0 / 3.0
    expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / math.sqrt(var + 1e-6)
    np.testing.assert_allclose(out, expected, rtol=1e-14)
    np.testing.assert_allclose(out, [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_layer_norm_zero_mean_unit_variance():
    x = Tensor(np.random.default_rng(5).normal(3.0, 2.0, size=(6, 8)))
    out = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-14).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-10)


def test_layer_norm_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        layer_norm(Tensor(np.ones(3)), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)


@pytest.mark.parametrize("shape", [(3, 4), (2, 6), (2, 3, 5)])
def test_layer_norm_gradcheck(shape):
    rng = np.random.default_rng(6)
    x, g, b = leaf(rng, *shape), leaf(rng, shape[-1]), leaf(rng, shape[-1])
    errs = check_gradients(lambda: projection_loss(layer_norm(x, g, b)), [x, g, b])
    assert max(errs) <= 1e-4


# shape ops -----------------------------------------------------------------------

def test_concat_then_slice_round_trip():
    rng = np.random.default_rng(7)
    a, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 3)))
    c = concat([a, b], axis=1)
    assert c.shape == (2, 6)
    np.testing.assert_array_equal(c[:, :3].data, a.data)
    np.testing.assert_array_equal(c[:, 3:].data, b.data)


def test_concat_rejects_mismatch():
    with pytest.raises(ShapeError):
        concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


@pytest.mark.parametrize("shape", SHAPES)
def test_shape_ops_gradcheck(shape):
    rng = np.random.default_rng(8)
    a, b = leaf(rng, *shape), leaf(rng, *shape)

    def f():
        c = concat([a, b], axis=-1)
        d = c[..., 1:-1].reshape(-1)
        return projection_loss(d) + mean(transpose(a, tuple(reversed(range(a.ndim)))), axis=0).sum()

    assert max(check_gradients(f, [a, b])) <= 1e-6


def test_fancy_index_gradient_accumulates_repeats():
    x = Tensor(np.arange(4.0), requires_grad=True)
    backward(x[[0, 0, 3]].sum())
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 0.0, 1.0])


# backward semantics ------------------------------------------------------------

def test_linear_grad_equals_input():
    rng = np.random.default_rng(9)
    w = Tensor(rng.normal(size=5), requires_grad=True)
    x = Tensor(rng.normal(size=5))
    backward((w * x).sum())
    np.testing.assert_array_equal(w.grad, x.data)


def test_backward_twice_accumulates():
    w = Tensor([1.0, 2.0], requires_grad=True)
    x = Tensor([3.0, 4.0])
    backward((w * x).sum())
    backward((w * x).sum())
    np.testing.assert_array_equal(w.grad, 2 * x.data)


def test_shared_subgraph_visited_once():
    w = Tensor([2.0], requires_grad=True)
    h = w * w
    backward((h + h * 3.0).sum())
    np.testing.assert_allclose(w.grad, [4.0 * 2.0 * 2.0])


def test_detached_tensor_gets_no_grad():
    w = Tensor([1.0, 2.0], requires_grad=True)
    d = w.detach()
    d.requires_grad = False
    backward((w * 2.0).sum() + (d * 5.0).sum())
    assert d.grad is None
    np.testing.assert_array_equal(w.grad, [2.0, 2.0])


def test_non_scalar_loss_rejected():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(w * 2.0)


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (w * 2.0).sum()
    assert not y.requires_grad


def test_backward_deterministic():
    def run():
        rng = np.random.default_rng(10)
        a, b = leaf(rng, 4, 5), leaf(rng, 5, 3)
        backward(projection_loss(softmax(matmul(a, b), -1)))
        return a.grad.tobytes() + b.grad.tobytes()

    assert run() == run()


# optimizers --------------------------------------------------------------------

def _param(value, grad):
    p = Parameter((1,))
    p.data[...] = value
    p.grad = np.array([grad], dtype=float)
    return p


def test_sgd_step():
    p = _param(1.0, 2.0)
    Optimizer([("p", p)], kind="sgd", lr=0.1).step()
    assert p.data[0] == pytest.approx(0.8, abs=1e-15)


@pytest.mark.parametrize("g", [1e-2, 1.0, 250.0, -3.0])
def test_adam_first_step_magnitude_is_lr(g):
    p = _param(0.5, g)
    Optimizer([("p", p)], kind="adam", lr=1e-3).step()
    # m_hat / sqrt(v_hat) = sign(g) on step one; eps perturbs by at most eps/|g|
    assert abs(0.5 - p.data[0]) == pytest.approx(1e-3, rel=1e-6)
    assert np.sign(0.5 - p.data[0]) == np.sign(g)


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_lr_leaves_parameters(kind):
    p = _param(0.25, 3.0)
    Optimizer([("p", p)], kind=kind, lr=0.0).step()
    assert p.data[0] == 0.25


def test_step_changes_only_params_with_nonzero_grad():
    a, b = _param(1.0, 0.5), _param(1.0, 0.0)
    Optimizer([("a", a), ("b", b)], kind="adam", lr=1e-2).step()
    assert a.data[0] != 1.0 and b.data[0] == 1.0


def test_step_without_grad_is_error():
    p = Parameter((2,))
    with pytest.raises(RuntimeError, match="no grad"):
        Optimizer([("p", p)]).step()


def test_adam_matches_textbook_recurrence():
    p = _param(0.0, 0.0)
    opt = Optimizer([("p", p)], kind="adam", lr=0.01)
    m = v = 0.0
    x = 0.0
    for t, g in enumerate([0.3, -0.1, 0.7, 0.2], start=1):
        p.grad = np.array([g])
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.01 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert p.data[0] == pytest.approx(x, abs=1e-15)
