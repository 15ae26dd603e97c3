import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from selfref import tensor as T
from selfref.tensor import ShapeError, Tensor

from _gradcheck import max_rel_error, projected


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_sum_gives_ones():
    w = leaf([1.0, -2.0, 3.0])
    T.backward(w.sum())
    np.testing.assert_array_equal(w.grad, np.ones(3))


def test_squared_norm_grad():
    w = leaf([1.0, 2.0])
    T.backward(T.tsum(w * w))
    np.testing.assert_array_equal(w.grad, [2.0, 4.0])


def test_non_scalar_loss_rejected():
    w = leaf([1.0, 2.0])
    with pytest.raises(ShapeError):
        T.backward(w * 2.0)


def test_gradients_accumulate_until_reset():
    w = leaf([1.0, 2.0])
    T.backward(w.sum())
    T.backward(w.sum())
    np.testing.assert_array_equal(w.grad, [2.0, 2.0])
    w.zero_grad()
    T.backward(w.sum())
    np.testing.assert_array_equal(w.grad, [1.0, 1.0])


def test_no_grad_records_nothing():
    w = leaf([1.0, 2.0])
    with T.no_grad():
        y = w * 3.0
    assert y.is_leaf and not y.requires_grad


def test_shared_subexpression_gets_both_paths():
    w = leaf([3.0])
    y = w * w + w
    T.backward(y.sum())
    np.testing.assert_allclose(w.grad, [7.0])


def test_broadcast_add_reduces_gradient():
    x = leaf(np.ones((3, 2)))
    b = leaf([0.5, -0.5])
    T.backward(T.tsum(x + b))
    np.testing.assert_array_equal(b.grad, [3.0, 3.0])


def test_l2norm_subgradient_at_zero():
    w = leaf(np.zeros((2, 3)))
    T.backward(T.tsum(T.l2norm(w, axis=-1)))
    np.testing.assert_array_equal(w.grad, np.zeros((2, 3)))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\)"):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_clip_passes_gradient_only_inside():
    w = leaf([-2.0, 0.0, 2.0])
    T.backward(T.tsum(T.clip(w, -1.0, 1.0)))
    np.testing.assert_array_equal(w.grad, [0.0, 1.0, 0.0])


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(0).standard_normal((4, 7)) * 30
    s = T.softmax(x, axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(s >= 0)


UNARY = {
    "exp": T.exp,
    "tanh": T.tanh,
    "relu": T.relu,
    "log": lambda a: T.log(T.exp(a) + 1.0),
    "power": lambda a: T.power(T.exp(a), 1.5),
    "softmax": lambda a: T.softmax(a, axis=-1),
    "l2norm": lambda a: T.l2norm(a + 5.0, axis=-1),
    "mean": lambda a: T.mean(a, axis=0, keepdims=True),
    "transpose": lambda a: T.transpose(a),
    "getitem": lambda a: a[np.array([0, 0, 1])],
    "reshape": lambda a: T.reshape(a, (-1,)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    rng = np.random.default_rng(1)
    x = leaf(rng.standard_normal((3, 4)))
    loss = projected(lambda: UNARY[name](x), rng)
    assert max_rel_error(loss, [x]) < 1e-4


@pytest.mark.parametrize(
    "op",
    [T.add, T.sub, T.mul, T.minimum, lambda a, b: T.div(a, T.exp(b)), lambda a, b: T.concat([a, b], axis=0)],
    ids=["add", "sub", "mul", "minimum", "div", "concat"],
)
def test_binary_gradients(op):
    rng = np.random.default_rng(2)
    a, b = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((3, 4)))
    assert max_rel_error(projected(lambda: op(a, b), rng), [a, b]) < 1e-4


def test_batched_matmul_and_linear_gradients():
    rng = np.random.default_rng(3)
    a = leaf(rng.standard_normal((2, 3, 4)))
    b = leaf(rng.standard_normal((2, 4, 5)))
    w = leaf(rng.standard_normal((5, 2)))
    bias = leaf(rng.standard_normal(2))
    loss = projected(lambda: T.linear(T.matmul(a, b), w, bias), rng)
    assert max_rel_error(loss, [a, b, w, bias]) < 1e-4


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-3, 3, allow_nan=False)))
def test_forward_backward_finite(x):
    w = leaf(x)
    y = T.tsum(T.softmax(T.tanh(w) * 2.0, axis=-1) + T.relu(w) * T.exp(-w * w))
    T.backward(y)
    assert np.all(np.isfinite(y.data)) and np.all(np.isfinite(w.grad))
    assert w.grad.shape == w.data.shape


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.integers(1, 3), st.integers(1, 3)), st.booleans())
def test_unbroadcast_restores_shape(shape, keep_leading):
    target = shape if keep_leading else shape[1:]
    g = np.ones((5,) + shape)
    out = T.unbroadcast(g, target)
    assert out.shape == target
    assert out.sum() == g.sum()
