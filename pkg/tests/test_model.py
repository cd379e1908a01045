"""
Tests for the assembled model and its ablation variants.
"""

import numpy as np
import pytest
import torch


# ── propagation ───────────────────────────────────────────────────────────────

def test_propagation_shapes(tiny_model):
    from core.manifold import is_on_manifold
    model, ds = tiny_model
    prop = model.propagate()
    assert prop.user_e.shape == (4, 8)
    assert prop.item_final.shape == (4, 8)
    assert prop.kg_agg.shape == (4, 8)
    assert prop.user_h.shape == (4, 9)
    assert is_on_manifold(prop.item_h_final)
    assert torch.all((prop.w_prime > 0) & (prop.w_prime < 1))


def test_full_scores_match_pairs(tiny_model):
    model, ds = tiny_model
    with torch.no_grad():
        prop = model.propagate()
        full = model.full_scores(prop, [0, 2])
        pairs = model.score_pairs(prop, [0, 0, 0, 0, 2, 2, 2, 2], [0, 1, 2, 3] * 2, mode="eval")
    assert full.shape == (2, 4)
    assert torch.allclose(full.reshape(-1), pairs, atol=1e-9)


def test_ids_out_of_range(tiny_model):
    from core.errors import IdOutOfRangeError
    model, _ = tiny_model
    prop = model.propagate()
    with pytest.raises(IdOutOfRangeError):
        model.score_pairs(prop, [4], [0])
    with pytest.raises(IdOutOfRangeError):
        model.score_pairs(prop, [0], [-1])
    with pytest.raises(IdOutOfRangeError):
        model.full_scores(prop, [7])


def test_parameters_finite_gradients(tiny_model):
    model, _ = tiny_model
    prop = model.propagate()
    model.score_pairs(prop, [0, 1], [2, 3]).sum().backward()
    for name, p in model.named_parameters():
        if p.grad is not None:
            assert torch.isfinite(p.grad).all(), name


def test_rank_clamped_to_matrix_size():
    from core.training import build_toy_state
    state, _, _ = build_toy_state(svd_rank=10)
    assert state.model.init.user_basis.shape == (4, 4)


# ── variants ──────────────────────────────────────────────────────────────────

def test_no_hyperbolic_is_euclidean():
    from core.training import build_toy_state
    state, _, _ = build_toy_state(variant="no-hyperbolic")
    model = state.model
    prop = model.propagate()
    assert prop.user_h is None
    scores = model.score_pairs(prop, [0, 1], [1, 2])
    expected = (prop.user_e[[0, 1]] * prop.item_final[[1, 2]]).sum(-1)
    assert torch.allclose(scores, expected)


def test_no_popularity_gate_is_static():
    from core.training import build_toy_state
    state, _, _ = build_toy_state(variant="no-popularity-gate")
    prop = state.model.propagate()
    assert torch.all(prop.w_prime == 0.5)


def test_no_svd_init_uses_free_tables():
    from core.svd_init import XavierInitParams
    from core.training import build_toy_state
    state, _, _ = build_toy_state(variant="no-svd-init")
    assert isinstance(state.model.init, XavierInitParams)


def test_no_tucker_uses_translational_score():
    from core.kg_tucker import transe_score
    from core.training import build_toy_state
    state, _, _ = build_toy_state(variant="no-tucker")
    assert state.model.kg_scorer is transe_score


def test_interaction_term_extends_kg_tables():
    from core.training import build_toy_state
    state, data, _ = build_toy_state(tucker_interaction_term=True)
    model = state.model
    assert model.tucker.num_entities == data.kg.num_entities + data.ds.num_users
    assert model.tucker.num_relations == data.kg.num_relations + 1
    with torch.no_grad():
        prop = model.propagate()
        full = model.full_scores(prop, [1, 3])
        pairs = model.score_pairs(prop, np.repeat([1, 3], 4), np.tile(np.arange(4), 2), mode="eval")
    assert torch.allclose(full.reshape(-1), pairs, atol=1e-9)


def test_regularized_parameters_are_matrices(tiny_model):
    model, _ = tiny_model
    params = model.regularized_parameters()
    assert params and all(p.dim() >= 2 for p in params)
    assert all(p is not model.fusion.gate_a for p in params)
