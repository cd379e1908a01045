"""
Parallel Euclidean and hyperbolic propagation over the user-item graph.

Node order is users first (0..M-1) then items (M..M+N-1).
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn as nn
import torch.nn.functional as F

from core.errors import ShapeMismatchError
from core.manifold import (
    MANIFOLD_TOL,
    CurvatureLike,
    check_on_manifold,
    clamp_tangent_norm,
    expmap0,
    lift_euclidean,
    logmap0,
    reproject,
    tangent_combine,
)

logger = logging.getLogger(__name__)


# ── Graph ─────────────────────────────────────────────────────────────────────

@dataclass(eq=False)
class NormalizedAdjacency:
    """Symmetric D^-1/2 A D^-1/2 over the bipartite graph, as scipy CSR and torch sparse."""
    num_users: int
    num_items: int
    matrix: sp.csr_matrix
    _torch: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    def to_torch(self, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        if dtype not in self._torch:
            coo = self.matrix.tocoo()
            indices = torch.as_tensor(np.vstack([coo.row, coo.col]), dtype=torch.long)
            values = torch.as_tensor(coo.data, dtype=dtype)
            self._torch[dtype] = torch.sparse_coo_tensor(
                indices, values, coo.shape, dtype=dtype
            ).coalesce()
        return self._torch[dtype]

    def propagate(self, H: torch.Tensor) -> torch.Tensor:
        if H.shape[0] != self.num_nodes:
            raise ShapeMismatchError(f"adjacency has {self.num_nodes} nodes, features have {H.shape[0]} rows")
        return torch.sparse.mm(self.to_torch(H.dtype), H)


def normalize_adjacency(train: np.ndarray, num_users: int, num_items: int) -> NormalizedAdjacency:
    """
    Build the normalized bipartite adjacency from train pairs.

    Args:
        train: (K, 2) user/item pairs
        num_users: M
        num_items: N

    Returns:
        NormalizedAdjacency whose (u, M+i) entry is 1/sqrt(deg(u) deg(i));
        isolated nodes keep zero rows
    """
    n = num_users + num_items
    rows = np.concatenate([train[:, 0], train[:, 1] + num_users])
    cols = np.concatenate([train[:, 1] + num_users, train[:, 0]])
    A = sp.csr_matrix((np.ones(len(rows), dtype=np.float64), (rows, cols)), shape=(n, n))
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nonzero = deg > 0
    inv_sqrt[nonzero] = deg[nonzero] ** -0.5
    D = sp.diags(inv_sqrt)
    return NormalizedAdjacency(num_users, num_items, sp.csr_matrix(D @ A @ D))


# ── Weights ───────────────────────────────────────────────────────────────────

class GnnWeights(nn.Module):
    """
    Per-layer weights of both pathways.

    All matrices start as identities, so an untrained stack applies plain
    normalized smoothing to the spectral prior.
    """

    def __init__(self, embed_dim: int, num_layers: int = 3, alpha_e: float = 0.8,
                 skip_weight: float = 0.5, activation: str = "leaky_relu", leaky_slope: float = 0.2,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        if num_layers < 1:
            raise ShapeMismatchError(f"num_layers must be >= 1, got {num_layers}")
        if not (0.0 <= alpha_e <= 1.0 and 0.0 <= skip_weight <= 1.0):
            raise ValueError("alpha_e and skip_weight must lie in [0, 1]")
        self.embed_dim = embed_dim
        self.num_layers = num_layers
        self.alpha_e = alpha_e
        self.skip_weight = skip_weight
        self.activation = activation
        self.leaky_slope = leaky_slope

        def eye_list():
            return nn.ParameterList(
                [nn.Parameter(torch.eye(embed_dim, dtype=dtype)) for _ in range(num_layers)]
            )

        self.W_E = eye_list()
        self.W_self = eye_list()
        self.hyp_agg = eye_list()

    def activate(self, x: torch.Tensor) -> torch.Tensor:
        if self.activation == "identity":
            return x
        return F.leaky_relu(x, negative_slope=self.leaky_slope)

    def euclidean_parameters(self) -> list[nn.Parameter]:
        return list(self.W_E) + list(self.W_self)

    def hyperbolic_parameters(self) -> list[nn.Parameter]:
        return list(self.hyp_agg)


# ── Layers ────────────────────────────────────────────────────────────────────

def euclidean_layer(H_prev: torch.Tensor, adj: NormalizedAdjacency, weights: GnnWeights,
                    layer: int = 0) -> torch.Tensor:
    """Activate(alpha * A H W_E + (1 - alpha) H W_self)."""
    if H_prev.shape[-1] != weights.embed_dim:
        raise ShapeMismatchError(f"features have width {H_prev.shape[-1]}, weights expect {weights.embed_dim}")
    a = weights.alpha_e
    out = a * adj.propagate(H_prev) @ weights.W_E[layer] + (1.0 - a) * H_prev @ weights.W_self[layer]
    return weights.activate(out)


def hyperbolic_layer(H_prev: torch.Tensor, adj: NormalizedAdjacency, weights: GnnWeights,
                     layer: int = 0, cv: CurvatureLike = 1.0, max_tangent_norm: Optional[float] = None,
                     check: bool = True) -> torch.Tensor:
    """
    One hyperbolic layer.

    Points go to the origin's tangent space, are aggregated by the adjacency
    and transformed, come back through expmap0 and are blended with the
    previous layer as tangent_combine([w_s, 1 - w_s]).

    Raises:
        ManifoldDomainError: H_prev is off the manifold
    """
    if check:
        with torch.no_grad():
            check_on_manifold(H_prev, cv, MANIFOLD_TOL, name=f"hyperbolic layer {layer} input")
    tangent = logmap0(H_prev, cv)
    agg = adj.propagate(tangent) @ weights.hyp_agg[layer].to(tangent.dtype)
    if max_tangent_norm is not None:
        agg = clamp_tangent_norm(agg, max_tangent_norm)
    updated = expmap0(agg, cv)
    w_s = float(weights.skip_weight)
    combined = tangent_combine([w_s, 1.0 - w_s], [updated, H_prev], cv)
    return reproject(combined, cv)


# ── Forward ───────────────────────────────────────────────────────────────────

@dataclass
class PathwayOutput:
    user_e: torch.Tensor
    item_e: torch.Tensor
    user_h: Optional[torch.Tensor] = None
    item_h: Optional[torch.Tensor] = None


def forward(H0_user: torch.Tensor, H0_item: torch.Tensor, weights: GnnWeights,
            adj: NormalizedAdjacency, cv: CurvatureLike = 1.0, max_tangent_norm: Optional[float] = 10.0,
            hyperbolic: bool = True) -> PathwayOutput:
    """
    Run both pathways for L layers from the same initial features.

    Args:
        H0_user: (M, d_e) initial user features
        H0_item: (N, d_e) initial item features
        weights: GnnWeights
        adj: NormalizedAdjacency
        cv: Curvature of the hyperbolic pathway
        max_tangent_norm: Clamp applied before every exponential map
        hyperbolic: False skips the hyperbolic pathway

    Returns:
        PathwayOutput split into user and item blocks
    """
    H0 = torch.cat([H0_user, H0_item], dim=0)
    if not torch.isfinite(H0).all():
        raise ValueError("initial features contain non-finite values")
    m = H0_user.shape[0]

    H_e = H0
    for layer in range(weights.num_layers):
        H_e = euclidean_layer(H_e, adj, weights, layer)
    out = PathwayOutput(user_e=H_e[:m], item_e=H_e[m:])

    if hyperbolic:
        H_h = lift_euclidean(H0, cv, max_norm=max_tangent_norm)
        for layer in range(weights.num_layers):
            H_h = hyperbolic_layer(H_h, adj, weights, layer, cv, max_tangent_norm)
        out.user_h, out.item_h = H_h[:m], H_h[m:]
    return out
