"""
The assembled recommender.

SparkModel owns every learnable tensor (Tucker KG scorer, spectral or free
initial tables, GNN weights, projection heads, fusion) and turns them into
user and item representations with propagate().
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from core.config import TrainConfig
from core.contrastive import KgAggregator, ProjectionHeads, infonce_loss, project_view
from core.data_ingest import InteractionDataset, KnowledgeGraph
from core.errors import IdOutOfRangeError
from core.fusion import FusionParams, fuse_item_embedding, gate_weight, popularity_vector, predict_matrix, predict_score
from core.gnn_hybrid import GnnWeights, forward, normalize_adjacency
from core.kg_tucker import TuckerParams, project_site, transe_score, tucker_loss, tucker_score
from core.manifold import Curvature, lift_euclidean
from core.svd_init import SvdFactors, SvdInitParams, XavierInitParams, cached_truncated_svd
from core.utils import torch_dtype

logger = logging.getLogger(__name__)

STATIC_GATE = 0.5


@dataclass
class Propagation:
    """Representations produced by one pass over the graph."""
    user_e: torch.Tensor
    item_e: torch.Tensor            # Euclidean GNN output rows
    item0: torch.Tensor             # spectral (or free) initial item rows
    kg_agg: torch.Tensor
    w_prime: torch.Tensor           # (N,)
    item_final: torch.Tensor
    user_h: Optional[torch.Tensor] = None
    item_h_final: Optional[torch.Tensor] = None


class SparkModel(nn.Module):
    """
    Args:
        cfg: Validated TrainConfig (variant selects the ablation)
        ds: Split InteractionDataset
        kg: KnowledgeGraph whose items are entities 0..N-1
        factors: Precomputed SVD factors (computed from the train split when None)
        svd_cache_dir: Optional directory for the factor cache
    """

    def __init__(self, cfg: TrainConfig, ds: InteractionDataset, kg: KnowledgeGraph,
                 factors: Optional[SvdFactors] = None, svd_cache_dir: Optional[str] = None):
        super().__init__()
        self.cfg = cfg
        self.variant = cfg.variant
        self.num_users = ds.num_users
        self.num_items = ds.num_items
        self.curvature = Curvature(cfg.curvature)
        dtype = torch_dtype(cfg.dtype)
        self.dtype = dtype

        self.kg = kg
        self.use_interaction_term = cfg.tucker_interaction_term
        extra_entities = ds.num_users if self.use_interaction_term else 0
        self.user_entity_offset = kg.num_entities
        self.interacts_relation = kg.num_relations
        self.tucker = TuckerParams(
            kg.num_entities + extra_entities,
            kg.num_relations + (1 if self.use_interaction_term else 0),
            cfg.entity_dim, cfg.core_dim, dropout=cfg.dropout, dtype=dtype,
        )

        if cfg.variant == "no-svd-init":
            self.init = XavierInitParams(ds.num_users, ds.num_items, cfg.embed_dim, dtype=dtype)
        else:
            if factors is None:
                rank = min(cfg.svd_rank, ds.num_users, ds.num_items)
                if rank < cfg.svd_rank:
                    logger.warning("svd_rank %d exceeds min(M, N); using %d", cfg.svd_rank, rank)
                factors = cached_truncated_svd(
                    ds.train_matrix(), rank, cfg.seed, cache_dir=svd_cache_dir,
                    oversampling=cfg.svd_oversampling, power_iters=cfg.svd_power_iters,
                )
            self.init = SvdInitParams(factors, cfg.embed_dim, beta=cfg.spectral_beta, dtype=dtype)

        self.gnn = GnnWeights(cfg.embed_dim, cfg.num_layers, cfg.alpha_e, cfg.skip_weight,
                              cfg.activation, cfg.leaky_slope, dtype=dtype)
        self.heads = ProjectionHeads(cfg.embed_dim, cfg.entity_dim, cfg.effective_proj_dim,
                                     cfg.temperature, cfg.leaky_slope, dtype=dtype)
        self.fusion = FusionParams(cfg.embed_dim, cfg.entity_dim, cfg.effective_attn_dim,
                                   cfg.gate_a_init, cfg.gate_b_init, cfg.leaky_slope, dtype=dtype)

        self.register_buffer("popularity", torch.as_tensor(popularity_vector(ds.item_popularity), dtype=dtype))
        self.adjacency = normalize_adjacency(ds.train, ds.num_users, ds.num_items)
        self.kg_aggregator = KgAggregator(kg, ds.num_items, dtype=dtype)

    # ── Variant switches ──────────────────────────────────────────────────────

    @property
    def hyperbolic(self) -> bool:
        return self.variant != "no-hyperbolic"

    @property
    def kg_scorer(self):
        return transe_score if self.variant == "no-tucker" else tucker_score

    def gate(self) -> torch.Tensor:
        if self.variant == "no-popularity-gate":
            return torch.full((self.num_items,), STATIC_GATE, dtype=self.dtype)
        return gate_weight(self.popularity, self.fusion)

    def regularized_parameters(self) -> list[nn.Parameter]:
        """Embedding tables and weight matrices (tensors of rank >= 2)."""
        return [p for p in self.parameters() if p.dim() >= 2]

    # ── Forward ───────────────────────────────────────────────────────────────

    def propagate(self) -> Propagation:
        H0_user, H0_item = self.init()
        paths = forward(H0_user, H0_item, self.gnn, self.adjacency, self.curvature,
                        max_tangent_norm=self.cfg.max_tangent_norm, hyperbolic=self.hyperbolic)
        # user entities (interaction term) sit after the KG rows
        kg_agg = self.kg_aggregator(self.tucker.entity_emb[:self.kg.num_entities], self.heads)
        w_prime = self.gate()
        item_final = fuse_item_embedding(paths.item_e, H0_item, kg_agg, w_prime, self.fusion)
        prop = Propagation(
            user_e=paths.user_e,
            item_e=paths.item_e,
            item0=H0_item,
            kg_agg=kg_agg,
            w_prime=w_prime,
            item_final=item_final,
        )
        if self.hyperbolic:
            prop.user_h = paths.user_h
            prop.item_h_final = lift_euclidean(item_final, self.curvature, max_norm=self.cfg.max_tangent_norm)
        return prop

    def _check_pairs(self, users: torch.Tensor, items: torch.Tensor) -> None:
        if users.numel() and (int(users.min()) < 0 or int(users.max()) >= self.num_users):
            raise IdOutOfRangeError(f"user id out of range [0, {self.num_users})")
        if items.numel() and (int(items.min()) < 0 or int(items.max()) >= self.num_items):
            raise IdOutOfRangeError(f"item id out of range [0, {self.num_items})")

    def score_pairs(self, prop: Propagation, users, items, mode: str = "train") -> torch.Tensor:
        """Prediction scores for aligned (user, item) id tensors."""
        users = torch.as_tensor(users, dtype=torch.long).reshape(-1)
        items = torch.as_tensor(items, dtype=torch.long).reshape(-1)
        self._check_pairs(users, items)
        if self.hyperbolic:
            scores = predict_score(prop.user_e[users], prop.item_final[items], prop.user_h[users],
                                   prop.item_h_final[items], prop.w_prime[items], self.curvature,
                                   check=False)
        else:
            scores = (prop.user_e[users] * prop.item_final[items]).sum(dim=-1)
        if self.use_interaction_term:
            scores = scores + self.interaction_scores(users, items, mode)
        return scores

    def interaction_scores(self, users: torch.Tensor, items: torch.Tensor, mode: str) -> torch.Tensor:
        """Tucker plausibility of (user entity, interacts, item)."""
        heads = users + self.user_entity_offset
        rel = torch.full_like(users, self.interacts_relation)
        tails = self.kg.item_to_entity[items.numpy()]
        return self.kg_scorer(self.tucker, heads, rel, torch.as_tensor(tails), mode)

    def full_scores(self, prop: Propagation, users) -> torch.Tensor:
        """Scores of the given users against the whole catalog, shape (U, N)."""
        users = torch.as_tensor(users, dtype=torch.long).reshape(-1)
        self._check_pairs(users, torch.zeros(0, dtype=torch.long))
        if self.hyperbolic:
            scores = predict_matrix(prop.user_e[users], prop.item_final, prop.user_h[users],
                                    prop.item_h_final, prop.w_prime, self.curvature)
        else:
            scores = prop.user_e[users] @ prop.item_final.T
        if self.use_interaction_term:
            scores = scores + self._interaction_matrix(users)
        return scores

    def _interaction_matrix(self, users: torch.Tensor) -> torch.Tensor:
        items = torch.arange(self.num_items)
        if self.variant == "no-tucker":
            rows = [self.interaction_scores(torch.full_like(items, int(u)), items, "eval") for u in users]
            return torch.stack(rows)
        entity_items = torch.as_tensor(self.kg.item_to_entity, dtype=torch.long)
        hp = project_site(self.tucker, users + self.user_entity_offset, "head", "eval")
        rp = project_site(self.tucker, torch.full_like(users, self.interacts_relation), "relation", "eval")
        tp = project_site(self.tucker, entity_items, "tail", "eval")
        w_r = torch.einsum("bj,ijk->bik", rp, self.tucker.core)
        w_hr = torch.einsum("bi,bik->bk", hp, w_r)
        return w_hr @ tp.T

    # ── Loss terms ────────────────────────────────────────────────────────────

    def contrastive_loss(self, prop: Propagation, items) -> torch.Tensor:
        """InfoNCE between the collaborative and KG views of the given items."""
        items = torch.as_tensor(items, dtype=torch.long).reshape(-1)
        z_svd = project_view(prop.item_e[items], self.heads.f_svd)
        z_kg = project_view(prop.kg_agg[items], self.heads.f_kg)
        return infonce_loss(z_svd, z_kg, self.heads.temperature)

    def kg_loss(self, pos: np.ndarray, neg: np.ndarray, mode: str = "train") -> torch.Tensor:
        return tucker_loss(self.tucker, pos, neg, mode, scorer=self.kg_scorer)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
