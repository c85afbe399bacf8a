import math

import numpy as np
import pytest

from graffin import autodiff as ad
from graffin.autodiff import ShapeError, Tensor, finite_difference_check
from graffin.graph import build_graph
from graffin.layers import (
    Aggregation,
    GruParams,
    LinearParams,
    MpParams,
    glorot_uniform,
    gru_sequence,
    init_params,
    linear_forward,
    mp_forward,
)


def naive_sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))


def naive_gru(x, W_z, W_r, W_s, U_z, U_r, U_s, b_z, b_r, b_s, h0):
    """Scalar loops over every entry: the reference recurrence."""
    n, d = x.shape
    hd = h0.shape[1]
    h = [h0[0, j] for j in range(hd)]
    out = np.zeros((n, hd))
    for t in range(n):
        z, r = [0.0] * hd, [0.0] * hd
        for j in range(hd):
            az = b_z[0, j] + sum(x[t, i] * W_z[i, j] for i in range(d)) + sum(h[k] * U_z[k, j] for k in range(hd))
            ar = b_r[0, j] + sum(x[t, i] * W_r[i, j] for i in range(d)) + sum(h[k] * U_r[k, j] for k in range(hd))
            z[j], r[j] = naive_sigmoid(az), naive_sigmoid(ar)
        new = [0.0] * hd
        for j in range(hd):
            a_s = b_s[0, j] + sum(x[t, i] * W_s[i, j] for i in range(d)) + sum(h[k] * r[k] * U_s[k, j] for k in range(hd))
            new[j] = z[j] * h[j] + (1.0 - z[j]) * math.tanh(a_s)
        h = new
        out[t] = h
    return out


def random_gru(in_dim, hidden, seed, scale=1.0, h0=True):
    rng = np.random.default_rng(seed)
    p = GruParams.init(in_dim, hidden, rng)
    for t in p.tensors():
        t.data[:] = scale * rng.standard_normal(t.shape)
    if h0:
        p.h0.data[:] = rng.uniform(-0.9, 0.9, p.h0.shape)
    return p


def test_linear_cases():
    x = Tensor(np.random.default_rng(0).standard_normal((4, 3)))
    ident = LinearParams(Tensor(np.eye(3)), Tensor(np.zeros((1, 3))))
    assert np.array_equal(linear_forward(x, ident).data, x.data)
    b = Tensor([[1.0, -2.0]])
    zero_x = linear_forward(Tensor(np.zeros((3, 3))), LinearParams(Tensor(np.ones((3, 2))), b))
    assert np.array_equal(zero_x.data, np.tile(b.data, (3, 1)))
    assert linear_forward(Tensor([[2.0]]), LinearParams(Tensor([[3.0]]), Tensor([[1.0]]))).item() == 7.0


@pytest.mark.parametrize("seed", range(5))
def test_gru_matches_naive_oracle(seed):
    x = np.random.default_rng(100 + seed).standard_normal((7, 3))
    p = random_gru(3, 4, seed)
    fast = gru_sequence(Tensor(x), p).data
    slow = naive_gru(x, *(t.data for t in p.tensors()))
    assert np.max(np.abs(fast - slow)) < 1e-12


def test_gru_all_zero_fixed_point():
    p = GruParams.init(3, 4, np.random.default_rng(0))
    for t in p.tensors():
        t.data[:] = 0.0
    out = gru_sequence(Tensor(np.random.default_rng(1).standard_normal((5, 3))), p).data
    assert not out.any()


def test_gru_update_gate_saturation_holds_state():
    p = random_gru(3, 4, 3)
    p.b_z.data[:] = 50.0
    out = gru_sequence(Tensor(np.random.default_rng(2).standard_normal((6, 3))), p).data
    np.testing.assert_allclose(out, np.tile(p.h0.data, (6, 1)), atol=1e-10)


def test_gru_boundedness():
    # moderate scale: far enough from float saturation for the strict bound to hold
    p = random_gru(3, 5, 4, scale=1.5)
    out = gru_sequence(Tensor(np.random.default_rng(5).standard_normal((40, 3)) * 2), p).data
    assert np.all(np.abs(out) < 1)
    big = gru_sequence(Tensor(np.random.default_rng(5).standard_normal((40, 3)) * 50), random_gru(3, 5, 4, scale=5.0)).data
    assert np.all(np.abs(big) <= 1)


def test_gru_causality():
    p = random_gru(2, 3, 6)
    x = np.random.default_rng(7).standard_normal((8, 2))
    base = gru_sequence(Tensor(x), p).data
    for t in range(8):
        y = x.copy()
        y[t] += 1e-3
        diff = np.abs(gru_sequence(Tensor(y), p).data - base).max(axis=1)
        assert np.all(diff[:t] == 0)
        assert diff[t] > 0


def test_gru_finite_differences():
    p = random_gru(3, 4, 8, scale=0.7)
    x = Tensor(np.random.default_rng(9).standard_normal((6, 3)), requires_grad=True)
    w = np.random.default_rng(10).standard_normal((6, 4))
    params = {"x": x, **p.named("gru")}
    err = finite_difference_check(lambda: ad.sum_all(ad.hadamard(gru_sequence(x, p), Tensor(w))), params)
    assert err < 1e-4


def test_gru_shape_check():
    p = random_gru(3, 4, 0)
    with pytest.raises(ShapeError, match="gru.W_z"):
        gru_sequence(Tensor(np.zeros((5, 2))), p)


def test_gru_single_step_closed_form():
    p = random_gru(2, 3, 11)
    x = np.random.default_rng(12).standard_normal((1, 2))
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    h0 = p.h0.data
    z = sig(x @ p.W_z.data + h0 @ p.U_z.data + p.b_z.data)
    r = sig(x @ p.W_r.data + h0 @ p.U_r.data + p.b_r.data)
    s = np.tanh(x @ p.W_s.data + (h0 * r) @ p.U_s.data + p.b_s.data)
    np.testing.assert_allclose(gru_sequence(Tensor(x), p).data, z * h0 + (1 - z) * s, atol=1e-14)


def test_mp_cases():
    v = np.array([[0.5, -1.0, 2.0]])
    eye = MpParams(Tensor(np.eye(3)), Aggregation.GCN)
    g1 = build_graph([], v, [0])
    assert np.array_equal(mp_forward(g1, Tensor(v), eye).data, np.maximum(v, 0))
    g2 = build_graph([(0, 1)], np.vstack([v, v]), [0, 0])
    np.testing.assert_allclose(mp_forward(g2, Tensor(np.vstack([v, v])), eye).data, np.maximum(np.vstack([v, v]), 0), atol=1e-15)
    assert not mp_forward(g2, Tensor(np.zeros((2, 3))), eye).data.any()


def test_mp_mean_constant_features():
    rng = np.random.default_rng(0)
    edges = [(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)]
    c = rng.standard_normal((1, 4))
    x = np.tile(c, (5, 1))  # node 4 is isolated
    g = build_graph(edges, x, [0] * 5)
    w = rng.standard_normal((4, 3))
    out = mp_forward(g, Tensor(x), MpParams(Tensor(w), Aggregation.MEAN)).data
    np.testing.assert_allclose(out[:4], np.tile(np.maximum(c @ w, 0), (4, 1)), atol=1e-14)
    assert not out[4].any()


def test_init_deterministic_and_bounded():
    a, b = init_params((30, 40), 5), init_params((30, 40), 5)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= math.sqrt(6 / 70))
    limit = math.sqrt(6 / 1040)
    big = glorot_uniform((1000, 40), 1)
    assert np.all(np.abs(big) <= limit)
    assert big.max() > 0.95 * limit and big.min() < -0.95 * limit
    lin = LinearParams.init(3, 4, np.random.default_rng(0))
    assert not lin.b.data.any()
    gru = GruParams.init(3, 4, np.random.default_rng(0))
    assert not any(t.data.any() for t in (gru.b_z, gru.b_r, gru.b_s, gru.h0))
    with pytest.raises(ValueError):
        init_params((0, 3), 0)
