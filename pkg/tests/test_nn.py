import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfref import tensor as T
from selfref.nn import (MLP, EmptySlotError, Embedding, Linear, MultiHeadAttention, copy_parameters,
                        forward_mlp, make_rng, soft_update)
from selfref.tensor import ShapeError

from _gradcheck import jitter_biases, max_rel_error, projected


def fixed_linear(weight, bias):
    layer = Linear(len(weight), len(weight[0]), make_rng(0, "fixed"))
    layer.weight.data = np.array(weight, dtype=np.float64)
    layer.bias.data = np.array(bias, dtype=np.float64)
    return layer


def test_zero_weight_layer_outputs_zero():
    layer = Linear(3, 2, make_rng(0, "z"), init="zeros")
    out = forward_mlp([layer], np.random.default_rng(0).standard_normal((4, 3)))
    np.testing.assert_array_equal(out.data, np.zeros((4, 2)))


def test_identity_layer_passes_input():
    layer = fixed_linear(np.eye(2), [0.0, 0.0])
    x = np.array([[0.25, -1.5]])
    np.testing.assert_array_equal(forward_mlp([layer], x).data, x)


def test_two_layer_against_scalar_oracle():
    w1, b1 = [[1.0, -2.0, 0.5], [3.0, 1.0, -1.0]], [0.1, 0.0, -0.2]
    w2, b2 = [[2.0], [-1.0], [4.0]], [0.3]
    x = (0.5, -0.5)
    hidden = []
    for j in range(3):
        z = sum(x[i] * w1[i][j] for i in range(2)) + b1[j]
        hidden.append(max(z, 0.0))
    expected = sum(hidden[j] * w2[j][0] for j in range(3)) + b2[0]
    out = forward_mlp([fixed_linear(w1, b1), fixed_linear(w2, b2)], np.array([x]))
    assert out.data.shape == (1, 1)
    assert out.data[0, 0] == pytest.approx(expected, abs=1e-15)


def test_mlp_dimension_mismatch_reports_shapes():
    net = MLP([3, 4, 2], make_rng(0, "m"))
    with pytest.raises(ShapeError, match=r"expects 3.*\(5, 2\)"):
        net(np.zeros((5, 2)))


def test_same_name_same_init():
    a = MLP([3, 4, 2], make_rng(7, "shared"))
    b = MLP([3, 4, 2], make_rng(7, "shared"))
    c = MLP([3, 4, 2], make_rng(7, "other"))
    for (_, p), (_, q), (_, r) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    assert not np.array_equal(a.layers[0].weight.data, c.layers[0].weight.data)


def test_hidden_layers_orthogonal_with_relu_gain():
    net = MLP([8, 8, 8, 1], make_rng(0, "o"))
    w = net.layers[0].weight.data
    np.testing.assert_allclose(w.T @ w, 2.0 * np.eye(8), atol=1e-12)


def test_state_dict_roundtrip_and_strictness():
    a = MLP([3, 4, 2], make_rng(0, "a"))
    b = MLP([3, 4, 2], make_rng(0, "b"))
    b.load_state_dict(a.state_dict())
    x = np.ones((1, 3))
    np.testing.assert_array_equal(a(x).data, b(x).data)
    with pytest.raises(KeyError):
        b.load_state_dict({"layers.0.weight": np.zeros((3, 4))})
    bad = a.state_dict()
    bad["layers.0.weight"] = np.zeros((4, 4))
    with pytest.raises(ShapeError):
        b.load_state_dict(bad)


def test_soft_update_extremes():
    a = MLP([2, 3, 1], make_rng(0, "a"))
    b = MLP([2, 3, 1], make_rng(0, "b"))
    before = b.state_dict()
    soft_update(b, a, 0.0)
    for k, v in b.state_dict().items():
        np.testing.assert_array_equal(v, before[k])
    soft_update(b, a, 1.0)
    for k, v in b.state_dict().items():
        np.testing.assert_array_equal(v, a.state_dict()[k])


def test_embedding_rows_by_index():
    emb = Embedding(5, 3, make_rng(0, "e"))
    out = emb(np.array([4, 0, 4]))
    np.testing.assert_array_equal(out.data, emb.weight.data[[4, 0, 4]])


# ------------------------------------------------------------------ attention


def random_mha(u=8, heads=2, seed=0):
    mha = MultiHeadAttention(u, heads, make_rng(seed, "mha"))
    rng = np.random.default_rng(seed)
    for layer in (mha.q_proj, mha.k_proj, mha.v_proj, mha.out_proj):
        layer.bias.data = rng.standard_normal(u) * 0.1
    return mha


def test_single_slot_weight_is_one():
    mha = random_mha()
    rng = np.random.default_rng(0)
    mha(rng.standard_normal((1, 8)), rng.standard_normal((1, 8)), rng.standard_normal((1, 8)))
    assert np.all(mha.last_weights == 1.0)


def test_two_slot_single_head_hand_oracle():
    mha = MultiHeadAttention(2, 1, make_rng(0, "hand"))
    wq, wk, wv, wo = [[1.0, 0.0], [0.5, 2.0]], [[2.0, -1.0], [0.0, 1.0]], [[1.0, 1.0], [-1.0, 0.5]], [[0.0, 1.0], [1.0, 0.0]]
    for layer, w in zip((mha.q_proj, mha.k_proj, mha.v_proj, mha.out_proj), (wq, wk, wv, wo)):
        layer.weight.data = np.array(w)
        layer.bias.data = np.zeros(2)
    q_in, keys_in, vals_in = (0.3, -0.2), [(1.0, 0.5), (-0.4, 0.8)], [(0.2, 0.1), (-1.0, 2.0)]

    def vecmat(v, w):
        return [sum(v[i] * w[i][j] for i in range(2)) for j in range(2)]

    q = vecmat(q_in, wq)
    ks = [vecmat(k, wk) for k in keys_in]
    vs = [vecmat(v, wv) for v in vals_in]
    scores = [(q[0] * k[0] + q[1] * k[1]) / math.sqrt(2) for k in ks]
    z = [math.exp(s - max(scores)) for s in scores]
    p = [e / sum(z) for e in z]
    mixed = [p[0] * vs[0][j] + p[1] * vs[1][j] for j in range(2)]
    expected = vecmat(mixed, wo)

    out = mha(np.array([q_in]), np.array(keys_in), np.array(vals_in))
    np.testing.assert_allclose(out.data[0], expected, rtol=0, atol=1e-14)
    np.testing.assert_allclose(mha.last_weights[0, 0], p, atol=1e-15)


def test_identical_slots_equal_single_slot():
    mha = random_mha()
    rng = np.random.default_rng(1)
    q, k, v = rng.standard_normal((1, 8)), rng.standard_normal((1, 8)), rng.standard_normal((1, 8))
    one = mha(q, k, v).data
    many = mha(q, np.repeat(k, 6, axis=0), np.repeat(v, 6, axis=0)).data
    np.testing.assert_allclose(many, one, atol=1e-14)


def test_empty_slots_rejected():
    with pytest.raises(EmptySlotError):
        random_mha()(np.zeros((1, 8)), np.zeros((0, 8)), np.zeros((0, 8)))


def test_model_dim_must_divide_heads():
    with pytest.raises(ValueError):
        MultiHeadAttention(6, 4, make_rng(0, "x"))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 4]))
def test_attention_weights_distribution_and_permutation(m, seed, heads):
    mha = random_mha(8, heads, seed % 100)
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((3, 8))
    k, v = rng.standard_normal((3, m, 8)) * 2, rng.standard_normal((3, m, 8))
    out = mha(q, k, v).data
    w = mha.last_weights
    assert w.shape == (3, heads, m)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)
    perm = rng.permutation(m)
    np.testing.assert_allclose(mha(q, k[:, perm], v[:, perm]).data, out, atol=1e-12)


def test_mha_gradients():
    rng = np.random.default_rng(4)
    for trial in range(20):
        mha = random_mha(8, 2, trial)
        q = T.Tensor(rng.standard_normal((2, 8)), requires_grad=True)
        k = T.Tensor(rng.standard_normal((2, 5, 8)), requires_grad=True)
        v = T.Tensor(rng.standard_normal((2, 5, 8)), requires_grad=True)
        loss = projected(lambda: mha(q, k, v), rng)
        assert max_rel_error(loss, [q, k, v] + mha.parameters()) < 1e-4


def test_mlp_gradients():
    rng = np.random.default_rng(5)
    for trial in range(20):
        net = jitter_biases(MLP([4, 6, 6, 3], make_rng(trial, "g"), final_activation="tanh"), rng)
        x = rng.standard_normal((5, 4))
        assert max_rel_error(projected(lambda: net(x), rng), net.parameters()) < 1e-4
