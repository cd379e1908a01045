"""
Popularity-gated fusion and the blended prediction score.

w' = sigmoid(a * p + b) decides, per item, how much the collaborative row
is kept versus the KG-fused row, and how much the Euclidean inner product
counts versus the negated hyperbolic distance.
"""

import logging
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from core.manifold import CurvatureLike, check_on_manifold, geodesic_distance, pairwise_distance
from core.utils import diagnostics

logger = logging.getLogger(__name__)


class FusionParams(nn.Module):
    """
    Gate scalars, single-key attention maps and the fusion MLP.

    Args:
        embed_dim: d_e
        entity_dim: d (width of the KG aggregate)
        attn_dim: d_a (query/key width; the value keeps width d_e)
    """

    def __init__(self, embed_dim: int, entity_dim: int, attn_dim: int, gate_a: float = 4.0,
                 gate_b: float = -2.0, leaky_slope: float = 0.2, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.embed_dim = embed_dim
        self.attn_dim = attn_dim
        self.leaky_slope = leaky_slope
        self.gate_a = nn.Parameter(torch.tensor(float(gate_a), dtype=dtype))
        self.gate_b = nn.Parameter(torch.tensor(float(gate_b), dtype=dtype))

        def matrix(rows, cols):
            w = nn.Parameter(torch.empty(rows, cols, dtype=dtype))
            nn.init.xavier_uniform_(w)
            return w

        self.kg_to_de = matrix(entity_dim, embed_dim)
        self.attn_Wq = matrix(embed_dim, attn_dim)
        self.attn_Wk = matrix(embed_dim, attn_dim)
        self.attn_Wv = matrix(embed_dim, embed_dim)
        self.fuse_W1 = matrix(2 * embed_dim, embed_dim)
        self.fuse_b1 = nn.Parameter(torch.zeros(embed_dim, dtype=dtype))
        self.fuse_W2 = matrix(embed_dim, embed_dim)
        self.fuse_b2 = nn.Parameter(torch.zeros(embed_dim, dtype=dtype))


# ── Popularity ────────────────────────────────────────────────────────────────

def popularity_vector(counts) -> np.ndarray:
    """
    log(1 + count_i) / log(1 + max_j count_j) for every item.

    All-zero counts give all zeros and bump diagnostics["empty_popularity"].
    """
    counts = np.asarray(counts, dtype=np.float64)
    top = counts.max() if counts.size else 0.0
    if top <= 0:
        diagnostics["empty_popularity"] += 1
        logger.warning("All item popularity counts are zero; popularity gate input set to 0")
        return np.zeros_like(counts)
    return np.log1p(counts) / math.log1p(top)


def popularity_score(ds, item: int) -> float:
    """Normalized log popularity of one item from the dataset's train counts."""
    return float(popularity_vector(ds.item_popularity)[item])


def gate_weight(p, params: FusionParams) -> torch.Tensor:
    """sigmoid(gate_a * p + gate_b)."""
    p = torch.as_tensor(p, dtype=params.gate_a.dtype)
    return torch.sigmoid(params.gate_a * p + params.gate_b)


# ── Attention & fusion ────────────────────────────────────────────────────────

def kg_attention(h_item0: torch.Tensor, kg_agg: torch.Tensor, params: FusionParams) -> torch.Tensor:
    """
    Single-key attention of the spectral item row over its KG aggregate.

    The softmax over one key is constant, so the value is gated by
    tanh(q . k / sqrt(d_a)) instead.
    """
    key_in = kg_agg @ params.kg_to_de
    q = h_item0 @ params.attn_Wq
    k = key_in @ params.attn_Wk
    v = key_in @ params.attn_Wv
    gate = torch.tanh((q * k).sum(dim=-1, keepdim=True) / math.sqrt(params.attn_dim))
    return gate * v


def fuse_mlp(x: torch.Tensor, params: FusionParams) -> torch.Tensor:
    hidden = F.leaky_relu(x @ params.fuse_W1 + params.fuse_b1, negative_slope=params.leaky_slope)
    return F.leaky_relu(hidden @ params.fuse_W2 + params.fuse_b2, negative_slope=params.leaky_slope)


def fuse_item_embedding(h_item_L: torch.Tensor, h_item0: torch.Tensor, kg_agg: torch.Tensor,
                        w_prime: torch.Tensor, params: FusionParams) -> torch.Tensor:
    """
    w' * h_item_L + (1 - w') * f_fuse([h_item_L, attention]).

    Args:
        h_item_L: (N, d_e) Euclidean GNN output rows
        h_item0: (N, d_e) spectral initial rows
        kg_agg: (N, d) KG aggregates
        w_prime: (N,) or (N, 1) gate weights
    """
    w = torch.as_tensor(w_prime, dtype=h_item_L.dtype)
    if w.dim() == h_item_L.dim() - 1:
        w = w.unsqueeze(-1)
    fused = fuse_mlp(torch.cat([h_item_L, kg_attention(h_item0, kg_agg, params)], dim=-1), params)
    return w * h_item_L + (1.0 - w) * fused


# ── Scoring ───────────────────────────────────────────────────────────────────

def predict_score(user_e: torch.Tensor, item_e_final: torch.Tensor, user_h: torch.Tensor,
                  item_h_final: torch.Tensor, w_prime, cv: CurvatureLike = 1.0,
                  check: bool = True) -> torch.Tensor:
    """
    w' <u_e, i_e> + (1 - w') (-d_L(u_h, i_h)) for aligned rows.

    Raises:
        ManifoldDomainError: Hyperbolic inputs off the manifold
    """
    if check:
        with torch.no_grad():
            check_on_manifold(user_h, cv, name="user_h")
            check_on_manifold(item_h_final, cv, name="item_h_final")
    w = torch.as_tensor(w_prime, dtype=user_e.dtype)
    euclid = (user_e * item_e_final).sum(dim=-1)
    hyper = -geodesic_distance(user_h, item_h_final, cv)
    return w * euclid + (1.0 - w) * hyper


def predict_matrix(user_e: torch.Tensor, item_e_final: torch.Tensor, user_h: torch.Tensor,
                   item_h_final: torch.Tensor, w_prime: torch.Tensor,
                   cv: CurvatureLike = 1.0) -> torch.Tensor:
    """Scores of every user row against every item row, shape (U, N)."""
    w = torch.as_tensor(w_prime, dtype=user_e.dtype).reshape(1, -1)
    euclid = user_e @ item_e_final.T
    hyper = -pairwise_distance(user_h, item_h_final, cv)
    return w * euclid + (1.0 - w) * hyper
