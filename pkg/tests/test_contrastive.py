"""
Tests for the KG aggregator, view projection and InfoNCE.
"""

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F


def _kg(triples, num_entities, num_items):
    from core.data_ingest import KnowledgeGraph
    arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    rels = int(arr[:, 1].max()) + 1 if len(arr) else 0
    return KnowledgeGraph(num_entities, rels, arr, np.arange(num_items, dtype=np.int64))


def _heads(d_e=4, d=4, d_p=4):
    from core.contrastive import ProjectionHeads
    return ProjectionHeads(d_e, d, d_p)


# ── kg aggregation ────────────────────────────────────────────────────────────

def test_isolated_item_returns_transformed_self():
    from core.contrastive import kg_neighbor_aggregate
    kg = _kg([[0, 0, 2]], num_entities=3, num_items=2)
    emb = torch.randn(3, 4, dtype=torch.float64)
    heads = _heads()
    out = kg_neighbor_aggregate(kg, emb, 1, heads)
    assert torch.allclose(out, F.leaky_relu(emb[1] @ heads.kg_agg_weights, 0.2))


def test_single_neighbor_mean_with_identity():
    from core.contrastive import kg_neighbor_aggregate
    kg = _kg([[0, 0, 2]], num_entities=3, num_items=2)
    emb = torch.rand(3, 4, dtype=torch.float64)
    out = kg_neighbor_aggregate(kg, emb, 0, _heads())
    assert torch.allclose(out, (emb[0] + emb[2]) / 2)


def test_aggregate_invariant_to_triple_order():
    from core.contrastive import KgAggregator
    triples = [[0, 0, 3], [0, 1, 4], [1, 0, 3], [2, 1, 4]]
    emb = torch.randn(5, 4, dtype=torch.float64)
    heads = _heads()
    a = KgAggregator(_kg(triples, 5, 3), 3)(emb, heads)
    b = KgAggregator(_kg(triples[::-1], 5, 3), 3)(emb, heads)
    assert torch.allclose(a, b)


def test_batched_aggregator_matches_single_item():
    from core.contrastive import KgAggregator, kg_neighbor_aggregate
    kg = _kg([[0, 0, 3], [0, 1, 4], [1, 0, 3], [3, 0, 4]], 5, 3)
    emb = torch.randn(5, 4, dtype=torch.float64)
    heads = _heads()
    batched = KgAggregator(kg, 3)(emb, heads)
    for item in range(3):
        assert torch.allclose(batched[item], kg_neighbor_aggregate(kg, emb, item, heads))


# ── project_view ──────────────────────────────────────────────────────────────

def test_project_view_examples():
    from core.contrastive import project_view
    eye = torch.eye(2, dtype=torch.float64)
    out = project_view(torch.tensor([[3.0, 4.0]], dtype=torch.float64), eye)
    assert torch.allclose(out, torch.tensor([[0.6, 0.8]], dtype=torch.float64))
    x = torch.randn(10, 5, dtype=torch.float64)
    head = torch.randn(5, 3, dtype=torch.float64)
    z = project_view(x, head)
    assert torch.allclose(z.norm(dim=-1), torch.ones(10, dtype=torch.float64), atol=1e-10)
    assert torch.allclose(project_view(2 * x, head), z)


def test_project_view_zero_floor_counts():
    from core.contrastive import project_view
    from core.utils import diagnostics
    before = diagnostics["zero_projection"]
    out = project_view(torch.zeros(2, 3, dtype=torch.float64), torch.eye(3, dtype=torch.float64))
    assert torch.isfinite(out).all()
    assert diagnostics["zero_projection"] == before + 2


# ── infonce_loss ──────────────────────────────────────────────────────────────

def test_single_element_batch_is_zero():
    from core.contrastive import infonce_loss
    z = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    assert infonce_loss(z, z, 0.2).item() == pytest.approx(0.0, abs=1e-12)


def test_two_orthogonal_pairs():
    from core.contrastive import infonce_loss
    z = torch.eye(2, dtype=torch.float64)
    assert infonce_loss(z, z, 1.0).item() == pytest.approx(2 * math.log(1 + math.exp(-1)), abs=1e-12)


def test_loss_decreases_with_positive_similarity():
    from core.contrastive import infonce_loss
    z_svd = torch.eye(3, dtype=torch.float64)
    previous = None
    for angle in np.linspace(1.2, 0.0, 7):
        # rotate the first positive toward its partner; other rows fixed
        z_kg = torch.eye(3, dtype=torch.float64)
        z_kg[0] = torch.tensor([math.cos(angle), 0.0, math.sin(angle)], dtype=torch.float64)
        loss = infonce_loss(z_svd, z_kg, 0.5).item()
        if previous is not None:
            assert loss < previous
        previous = loss


def test_symmetry_and_empty_batch():
    from core.contrastive import infonce_loss
    from core.errors import EmptyBatchError
    a = F.normalize(torch.randn(5, 3, dtype=torch.float64), dim=-1)
    b = F.normalize(torch.randn(5, 3, dtype=torch.float64), dim=-1)
    assert infonce_loss(a, b, 0.3).item() == pytest.approx(infonce_loss(b, a, 0.3).item(), abs=1e-12)
    with pytest.raises(EmptyBatchError):
        infonce_loss(torch.zeros(0, 3), torch.zeros(0, 3), 0.3)


def test_low_temperature_limit():
    from core.contrastive import infonce_loss
    z = torch.eye(3, dtype=torch.float64)
    assert infonce_loss(z, z, 0.01).item() < 1e-10


def test_gradient_matches_finite_differences():
    from core.contrastive import infonce_loss, project_view
    torch.manual_seed(0)
    x_svd = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    x_kg = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    eye = torch.eye(3, dtype=torch.float64)

    def fn(a, b):
        return infonce_loss(project_view(a, eye), project_view(b, eye), 0.2)

    assert torch.autograd.gradcheck(fn, (x_svd, x_kg), eps=1e-5, atol=1e-7, rtol=1e-4)
