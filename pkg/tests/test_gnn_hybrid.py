"""
Tests for the normalized adjacency and both propagation pathways.
"""

import math

import numpy as np
import pytest
import torch


def _random_train(m=4, n=4, density=0.5, seed=0):
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < density
    mask[0, 0] = True
    users, items = np.nonzero(mask)
    return np.stack([users, items], axis=1).astype(np.int64)


def _weights(d=3, layers=1, **kwargs):
    from core.gnn_hybrid import GnnWeights
    return GnnWeights(d, layers, **kwargs)


# ── normalize_adjacency ───────────────────────────────────────────────────────

def test_single_edge_entries():
    from core.gnn_hybrid import normalize_adjacency
    adj = normalize_adjacency(np.array([[0, 0]]), 1, 1)
    assert adj.matrix.toarray().tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_star_user_entries():
    from core.gnn_hybrid import normalize_adjacency
    adj = normalize_adjacency(np.array([[0, i] for i in range(4)]), 1, 4)
    dense = adj.matrix.toarray()
    assert np.allclose(dense[0, 1:], 0.5)
    assert np.allclose(dense[1:, 0], 0.5)


def test_structure_symmetry_and_spectral_radius():
    from core.gnn_hybrid import normalize_adjacency
    for seed in range(5):
        train = _random_train(6, 8, 0.4, seed)
        adj = normalize_adjacency(train, 6, 8)
        dense = adj.matrix.toarray()
        assert np.allclose(dense, dense.T)
        assert adj.matrix.nnz == 2 * len(train)
        deg_u = np.bincount(train[:, 0], minlength=6)
        deg_i = np.bincount(train[:, 1], minlength=8)
        u, i = train[0]
        assert dense[u, 6 + i] == pytest.approx(1 / math.sqrt(deg_u[u] * deg_i[i]))
        assert np.abs(np.linalg.eigvalsh(dense)).max() <= 1 + 1e-10


def test_isolated_node_zero_row():
    from core.gnn_hybrid import normalize_adjacency
    adj = normalize_adjacency(np.array([[0, 0]]), 2, 2)
    dense = adj.matrix.toarray()
    assert not dense[1].any() and not dense[3].any()


# ── euclidean_layer ───────────────────────────────────────────────────────────

def test_euclidean_self_branch_identity():
    from core.gnn_hybrid import euclidean_layer, normalize_adjacency
    adj = normalize_adjacency(_random_train(), 4, 4)
    H = torch.randn(8, 3, dtype=torch.float64)
    w = _weights(alpha_e=0.0, activation="identity")
    assert torch.allclose(euclidean_layer(H, adj, w), H)


def test_euclidean_zero_input():
    from core.gnn_hybrid import euclidean_layer, normalize_adjacency
    adj = normalize_adjacency(_random_train(), 4, 4)
    assert torch.count_nonzero(euclidean_layer(torch.zeros(8, 3, dtype=torch.float64), adj, _weights())) == 0


def test_euclidean_single_edge_swaps_rows():
    from core.gnn_hybrid import euclidean_layer, normalize_adjacency
    adj = normalize_adjacency(np.array([[0, 0]]), 1, 1)
    H = torch.tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=torch.float64)
    out = euclidean_layer(H, adj, _weights(alpha_e=1.0, activation="identity"))
    assert torch.allclose(out, H.flip(0))


def test_euclidean_shape_mismatch():
    from core.errors import ShapeMismatchError
    from core.gnn_hybrid import euclidean_layer, normalize_adjacency
    adj = normalize_adjacency(_random_train(), 4, 4)
    with pytest.raises(ShapeMismatchError):
        euclidean_layer(torch.zeros(8, 5, dtype=torch.float64), adj, _weights())


# ── hyperbolic_layer ──────────────────────────────────────────────────────────

def test_hyperbolic_skip_only_returns_input():
    from core.gnn_hybrid import hyperbolic_layer, normalize_adjacency
    from core.manifold import lift_euclidean
    adj = normalize_adjacency(_random_train(), 4, 4)
    H = lift_euclidean(torch.randn(8, 3, dtype=torch.float64))
    out = hyperbolic_layer(H, adj, _weights(skip_weight=0.0))
    assert torch.allclose(out, H, atol=1e-8)


def test_hyperbolic_isolated_node_goes_to_origin():
    from core.gnn_hybrid import hyperbolic_layer, normalize_adjacency
    from core.manifold import lift_euclidean, origin
    adj = normalize_adjacency(np.array([[0, 0]]), 2, 2)
    H = lift_euclidean(torch.randn(4, 3, dtype=torch.float64))
    out = hyperbolic_layer(H, adj, _weights(skip_weight=1.0))
    assert torch.allclose(out[1], origin(3), atol=1e-12)


def test_hyperbolic_closure():
    from core.gnn_hybrid import hyperbolic_layer, normalize_adjacency
    from core.manifold import lift_euclidean, lorentz_inner
    adj = normalize_adjacency(_random_train(5, 7, 0.5, 3), 5, 7)
    for c in (0.5, 1.0, 2.0):
        H = lift_euclidean(torch.randn(12, 3, dtype=torch.float64) * 2, c)
        out = hyperbolic_layer(H, adj, _weights(), cv=c)
        assert torch.allclose(lorentz_inner(out, out), torch.full((12,), -c, dtype=torch.float64), atol=1e-6)


def test_hyperbolic_rejects_off_manifold_input():
    from core.errors import ManifoldDomainError
    from core.gnn_hybrid import hyperbolic_layer, normalize_adjacency
    adj = normalize_adjacency(_random_train(), 4, 4)
    with pytest.raises(ManifoldDomainError):
        hyperbolic_layer(torch.ones(8, 4, dtype=torch.float64), adj, _weights())


# ── forward ───────────────────────────────────────────────────────────────────

def test_forward_single_layer_matches_layer_ops():
    from core.gnn_hybrid import euclidean_layer, forward, hyperbolic_layer, normalize_adjacency
    from core.manifold import lift_euclidean
    adj = normalize_adjacency(_random_train(), 4, 4)
    w = _weights()
    Hu, Hi = torch.randn(4, 3, dtype=torch.float64), torch.randn(4, 3, dtype=torch.float64)
    out = forward(Hu, Hi, w, adj)
    H0 = torch.cat([Hu, Hi])
    assert torch.allclose(torch.cat([out.user_e, out.item_e]), euclidean_layer(H0, adj, w))
    expected_h = hyperbolic_layer(lift_euclidean(H0, max_norm=10.0), adj, w, max_tangent_norm=10.0)
    assert torch.allclose(torch.cat([out.user_h, out.item_h]), expected_h)


def test_forward_deterministic_and_pathways_independent():
    from core.gnn_hybrid import forward, normalize_adjacency
    adj = normalize_adjacency(_random_train(), 4, 4)
    w = _weights(layers=2)
    Hu, Hi = torch.randn(4, 3, dtype=torch.float64), torch.randn(4, 3, dtype=torch.float64)
    a = forward(Hu, Hi, w, adj)
    with torch.no_grad():
        for p in w.hyperbolic_parameters():
            p.add_(0.3)
    b = forward(Hu, Hi, w, adj)
    assert torch.equal(a.user_e, b.user_e) and torch.equal(a.item_e, b.item_e)
    assert not torch.allclose(a.item_h, b.item_h)
    c = forward(Hu, Hi, w, adj)
    assert torch.equal(b.item_h, c.item_h)


def test_forward_permutation_equivariance():
    from core.gnn_hybrid import forward, normalize_adjacency
    train = _random_train(3, 3, 0.6, seed=5)
    w = _weights(layers=2)
    with torch.no_grad():
        for p in w.parameters():
            p.add_(0.1 * torch.randn_like(p))
    Hu, Hi = torch.randn(3, 3, dtype=torch.float64), torch.randn(3, 3, dtype=torch.float64)
    up, ip = np.array([2, 0, 1]), np.array([1, 2, 0])
    # relabel: new user k is old user up[k]
    inv_u, inv_i = np.argsort(up), np.argsort(ip)
    permuted = np.stack([inv_u[train[:, 0]], inv_i[train[:, 1]]], axis=1)
    base = forward(Hu, Hi, w, normalize_adjacency(train, 3, 3))
    moved = forward(Hu[up], Hi[ip], w, normalize_adjacency(permuted, 3, 3))
    assert torch.allclose(moved.user_e, base.user_e[up], atol=1e-10)
    assert torch.allclose(moved.item_e, base.item_e[ip], atol=1e-10)
    assert torch.allclose(moved.item_h, base.item_h[ip], atol=1e-10)


def test_forward_gradients_match_finite_differences():
    from core.gnn_hybrid import forward, normalize_adjacency
    adj = normalize_adjacency(_random_train(4, 4, 0.5, 1), 4, 4)
    w = _weights(d=3, layers=2)
    torch.manual_seed(0)
    with torch.no_grad():
        for p in w.parameters():
            p.add_(0.1 * torch.randn_like(p))
    Hu = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    Hi = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)

    def fn(hu, hi):
        out = forward(hu, hi, w, adj)
        return (out.user_e * out.item_e).sum() + (out.user_h[:, 1:] ** 2).sum() + out.item_h[:, 0].sum()

    assert torch.autograd.gradcheck(fn, (Hu, Hi), eps=1e-5, atol=1e-6, rtol=1e-4)
