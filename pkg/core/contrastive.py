"""
Contrastive alignment of the collaborative and KG item views.

The collaborative view projects Euclidean GNN item rows with f_SVD; the KG
view averages an item's entity with its one-hop KG neighbors, transforms the
mean and projects it with f_KG. Both views are unit-normalized and aligned
with a bidirectional InfoNCE loss over in-batch negatives.
"""

import logging
import math

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn as nn
import torch.nn.functional as F

from core.data_ingest import KnowledgeGraph
from core.errors import EmptyBatchError, ShapeMismatchError
from core.utils import diagnostics

logger = logging.getLogger(__name__)

PROJECTION_FLOOR = 1e-12


class ProjectionHeads(nn.Module):
    """f_SVD (d_e -> d_p), f_KG (d -> d_p), the KG aggregator transform (d x d) and tau."""

    def __init__(self, embed_dim: int, entity_dim: int, proj_dim: int, temperature: float = 0.2,
                 leaky_slope: float = 0.2, dtype: torch.dtype = torch.float64):
        super().__init__()
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.temperature = temperature
        self.leaky_slope = leaky_slope
        self.f_svd = nn.Parameter(torch.empty(embed_dim, proj_dim, dtype=dtype))
        self.f_kg = nn.Parameter(torch.empty(entity_dim, proj_dim, dtype=dtype))
        self.kg_agg_weights = nn.Parameter(torch.eye(entity_dim, dtype=dtype))
        nn.init.xavier_uniform_(self.f_svd)
        nn.init.xavier_uniform_(self.f_kg)


# ── KG aggregation ────────────────────────────────────────────────────────────

def neighbor_mean_matrix(kg: KnowledgeGraph, num_items: int) -> sp.csr_matrix:
    """
    Row i averages item i's entity and its one-hop neighbors.

    Returns:
        (N, |E|) CSR matrix with rows summing to 1
    """
    neighbors = kg.neighbors()
    rows, cols, vals = [], [], []
    for item in range(num_items):
        entity = int(kg.item_to_entity[item])
        members = np.unique(np.append(neighbors[entity], entity))
        rows.extend([item] * len(members))
        cols.extend(members.tolist())
        vals.extend([1.0 / len(members)] * len(members))
    return sp.csr_matrix((vals, (rows, cols)), shape=(num_items, kg.num_entities))


def _sparse_torch(mat: sp.csr_matrix, dtype: torch.dtype) -> torch.Tensor:
    coo = mat.tocoo()
    indices = torch.as_tensor(np.vstack([coo.row, coo.col]), dtype=torch.long)
    return torch.sparse_coo_tensor(indices, torch.as_tensor(coo.data, dtype=dtype), coo.shape).coalesce()


class KgAggregator:
    """Cached neighbor-mean operator over a fixed KG."""

    def __init__(self, kg: KnowledgeGraph, num_items: int, dtype: torch.dtype = torch.float64):
        self.matrix = neighbor_mean_matrix(kg, num_items)
        self.operator = _sparse_torch(self.matrix, dtype)

    def __call__(self, entity_emb: torch.Tensor, heads: ProjectionHeads) -> torch.Tensor:
        """Aggregates for every item, shape (N, d)."""
        mean = torch.sparse.mm(self.operator, entity_emb)
        return F.leaky_relu(mean @ heads.kg_agg_weights, negative_slope=heads.leaky_slope)


def kg_neighbor_aggregate(kg: KnowledgeGraph, entity_emb: torch.Tensor, item: int,
                          heads: ProjectionHeads) -> torch.Tensor:
    """
    KG aggregate of one item.

    Items without triples return the transformed self-embedding.
    """
    entity = int(kg.item_to_entity[item])
    members = np.unique(np.append(kg.neighbors()[entity], entity))
    mean = entity_emb[torch.as_tensor(members, dtype=torch.long)].mean(dim=0)
    return F.leaky_relu(mean @ heads.kg_agg_weights, negative_slope=heads.leaky_slope)


# ── Views & loss ──────────────────────────────────────────────────────────────

def project_view(x: torch.Tensor, head: torch.Tensor) -> torch.Tensor:
    """
    Project rows with head and normalize them to unit length.

    Zero projections are divided by PROJECTION_FLOOR instead and counted in
    diagnostics["zero_projection"].
    """
    z = x @ head
    norm = z.norm(dim=-1, keepdim=True)
    zeros = int((norm < PROJECTION_FLOOR).sum())
    if zeros:
        diagnostics["zero_projection"] += zeros
        logger.debug("%d zero projections floored", zeros)
    return z / norm.clamp_min(PROJECTION_FLOOR)


def infonce_loss(z_svd: torch.Tensor, z_kg: torch.Tensor, tau: float) -> torch.Tensor:
    """
    Bidirectional InfoNCE over in-batch negatives.

    Args:
        z_svd: (B, d_p) unit rows of the collaborative view
        z_kg: (B, d_p) unit rows of the KG view
        tau: Temperature

    Returns:
        Cross-entropy of the similarity matrix plus that of its transpose,
        each averaged over the batch

    Raises:
        EmptyBatchError: B == 0
    """
    if z_svd.shape != z_kg.shape:
        raise ShapeMismatchError(f"views differ in shape: {tuple(z_svd.shape)} vs {tuple(z_kg.shape)}")
    if z_svd.shape[0] == 0:
        raise EmptyBatchError("infonce_loss: empty batch")
    if tau <= 0 or not math.isfinite(tau):
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = z_svd @ z_kg.T / tau
    labels = torch.arange(z_svd.shape[0])
    return F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels)
