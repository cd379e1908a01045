"""
Tucker scoring of knowledge-graph triples.

score(h, r, t) = sum_ijk W[i, j, k] * h'_i * r'_j * t'_k with
h' = e_h W_e, r' = e_r W_r, t' = e_t W_e, each standardized and dropped out.
The contraction is staged: core x r' over its second mode, then h', then t'.
"""

import logging
import math
from typing import Iterable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from core.data_ingest import KnowledgeGraph
from core.errors import EmptyBatchError, IdOutOfRangeError, ShapeMismatchError
from core.utils import diagnostics

logger = logging.getLogger(__name__)

NEGATIVE_ATTEMPTS = 100
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
NORM_SITES = ("head", "relation", "tail")


class TuckerParams(nn.Module):
    """
    Learnable tensors of the KG scorer.

    Args:
        num_entities: |E|
        num_relations: |R|
        entity_dim: d
        core_dim: d_c (must not exceed d)
        dropout: Rate applied after every normalization site in train mode
        normalize: Disable to score raw projections (used by oracles)
    """

    def __init__(self, num_entities: int, num_relations: int, entity_dim: int, core_dim: int,
                 dropout: float = 0.2, normalize: bool = True, dtype: torch.dtype = torch.float64):
        super().__init__()
        if core_dim > entity_dim:
            raise ShapeMismatchError(f"core_dim ({core_dim}) must not exceed entity_dim ({entity_dim})")
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.entity_dim = entity_dim
        self.core_dim = core_dim
        self.dropout = dropout
        self.normalize = normalize

        bound = 1.0 / math.sqrt(entity_dim)
        self.entity_emb = nn.Parameter(torch.empty(num_entities, entity_dim, dtype=dtype).uniform_(-bound, bound))
        self.relation_emb = nn.Parameter(torch.empty(max(num_relations, 1), entity_dim, dtype=dtype).uniform_(-bound, bound))
        self.W_e = nn.Parameter(torch.empty(entity_dim, core_dim, dtype=dtype))
        self.W_r = nn.Parameter(torch.empty(entity_dim, core_dim, dtype=dtype))
        nn.init.xavier_uniform_(self.W_e)
        nn.init.xavier_uniform_(self.W_r)
        self.core = nn.Parameter(torch.empty(core_dim, core_dim, core_dim, dtype=dtype).uniform_(-0.1, 0.1))

        for site in NORM_SITES:
            self.register_buffer(f"running_mean_{site}", torch.zeros(core_dim, dtype=dtype))
            self.register_buffer(f"running_var_{site}", torch.ones(core_dim, dtype=dtype))

    def norm_stats(self, site: str) -> tuple[torch.Tensor, torch.Tensor]:
        return getattr(self, f"running_mean_{site}"), getattr(self, f"running_var_{site}")

    def check_ids(self, h: torch.Tensor, r: torch.Tensor, t: torch.Tensor) -> None:
        for name, ids, limit in (("head", h, self.num_entities),
                                 ("relation", r, self.num_relations),
                                 ("tail", t, self.num_entities)):
            if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= limit):
                raise IdOutOfRangeError(f"{name} id out of range [0, {limit})")


# ── Scoring ───────────────────────────────────────────────────────────────────

def _normalize(params: TuckerParams, x: torch.Tensor, site: str, train: bool) -> torch.Tensor:
    if not params.normalize:
        return x
    mean, var = params.norm_stats(site)
    # a single row has no batch variance, so running statistics stand in
    use_batch = train and x.shape[0] > 1
    out = F.batch_norm(x, mean, var, training=use_batch, momentum=BN_MOMENTUM, eps=BN_EPS)
    return F.dropout(out, p=params.dropout, training=train)


def contract_core(core: torch.Tensor, h: torch.Tensor, r: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Staged contraction: (core x_2 r) then h then the inner product with t."""
    w_r = torch.einsum("bj,ijk->bik", r, core)
    w_hr = torch.einsum("bi,bik->bk", h, w_r)
    return (w_hr * t).sum(dim=-1)


def project_site(params: TuckerParams, ids: torch.Tensor, site: str, mode: str = "train") -> torch.Tensor:
    """Projected and normalized rows for one site ("head", "relation" or "tail")."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if site == "relation":
        raw = params.relation_emb[ids] @ params.W_r
    else:
        raw = params.entity_emb[ids] @ params.W_e
    return _normalize(params, raw, site, mode == "train")


def project_triples(params: TuckerParams, h, r, t, mode: str = "train"):
    """Projected and normalized (h', r', t') for id batches."""
    h, r, t = (torch.as_tensor(x, dtype=torch.long).reshape(-1) for x in (h, r, t))
    params.check_ids(h, r, t)
    return (project_site(params, h, "head", mode),
            project_site(params, r, "relation", mode),
            project_site(params, t, "tail", mode))


def tucker_score(params: TuckerParams, h, r, t, mode: str = "train") -> torch.Tensor:
    """
    Plausibility scores of triples.

    Args:
        params: TuckerParams
        h, r, t: Id tensors (or ints) of equal length
        mode: "train" uses batch statistics and dropout, "eval" running statistics

    Returns:
        Score tensor of shape (B,)

    Raises:
        IdOutOfRangeError: Any id outside its table
    """
    hp, rp, tp = project_triples(params, h, r, t, mode)
    return contract_core(params.core, hp, rp, tp)


def transe_score(params: TuckerParams, h, r, t, mode: str = "train") -> torch.Tensor:
    """Translational score -|e_h + e_r - e_t| used when the Tucker scorer is ablated."""
    h, r, t = (torch.as_tensor(x, dtype=torch.long).reshape(-1) for x in (h, r, t))
    params.check_ids(h, r, t)
    diff = params.entity_emb[h] + params.relation_emb[r] - params.entity_emb[t]
    return -(diff * diff).sum(dim=-1).clamp_min(1e-24).sqrt()


def brute_force_score(core: torch.Tensor, h: torch.Tensor, r: torch.Tensor, t: torch.Tensor) -> float:
    """Triple-loop reference contraction for a single triple."""
    total = 0.0
    n = core.shape[0]
    for i in range(n):
        for j in range(n):
            for k in range(n):
                total += float(core[i, j, k] * h[i] * r[j] * t[k])
    return total


# ── Negatives & loss ──────────────────────────────────────────────────────────

def sample_negative_triple(kg: KnowledgeGraph, pos, rng: np.random.Generator,
                           observed: Optional[set] = None) -> tuple[int, int, int]:
    """
    Corrupt the tail of a positive triple.

    The new tail is uniform over entities other than t; observed triples are
    resampled up to NEGATIVE_ATTEMPTS times and then accepted.

    Args:
        kg: KnowledgeGraph (|E| >= 2)
        pos: (h, r, t)
        rng: Seeded numpy generator
        observed: Precomputed kg.triple_set() (computed when omitted)
    """
    h, r, t = (int(x) for x in pos)
    if kg.num_entities < 2:
        raise ValueError("negative sampling needs at least two entities")
    if observed is None:
        observed = kg.triple_set()
    candidate = t
    for _ in range(NEGATIVE_ATTEMPTS):
        k = int(rng.integers(kg.num_entities - 1))
        candidate = k if k < t else k + 1
        if (h, r, candidate) not in observed:
            return h, r, candidate
    diagnostics["observed_negative_accepted"] += 1
    return h, r, candidate


def sample_negative_triples(kg: KnowledgeGraph, positives: np.ndarray, rng: np.random.Generator,
                            observed: Optional[set] = None) -> np.ndarray:
    """Vector form of sample_negative_triple over a (B, 3) array."""
    observed = kg.triple_set() if observed is None else observed
    return np.asarray([sample_negative_triple(kg, row, rng, observed) for row in positives],
                      dtype=np.int64).reshape(-1, 3)


def tucker_loss(params: TuckerParams, pos, neg, mode: str = "train", scorer=None) -> torch.Tensor:
    """
    BPR-like KG loss: mean of -log sigmoid(score(pos) - score(neg)).

    Positives and negatives are scored in one batch so they share normalization
    statistics.

    Args:
        params: TuckerParams
        pos: (B, 3) positive triples
        neg: (B, 3) negatives aligned with pos
        mode: "train" or "eval"
        scorer: Score function (defaults to tucker_score)

    Raises:
        EmptyBatchError: B == 0
    """
    pos = torch.as_tensor(np.asarray(pos), dtype=torch.long).reshape(-1, 3)
    neg = torch.as_tensor(np.asarray(neg), dtype=torch.long).reshape(-1, 3)
    if pos.shape[0] == 0:
        raise EmptyBatchError("tucker_loss: empty batch")
    if pos.shape != neg.shape:
        raise ShapeMismatchError(f"tucker_loss: {tuple(pos.shape)} positives vs {tuple(neg.shape)} negatives")
    scorer = scorer or tucker_score
    both = torch.cat([pos, neg], dim=0)
    scores = scorer(params, both[:, 0], both[:, 1], both[:, 2], mode)
    b = pos.shape[0]
    return F.softplus(-(scores[:b] - scores[b:])).mean()


def iter_triple_batches(triples: np.ndarray, batch_size: int,
                        rng: np.random.Generator) -> Iterable[np.ndarray]:
    """Shuffled (B, 3) batches covering every triple once."""
    order = rng.permutation(len(triples))
    for start in range(0, len(order), batch_size):
        yield triples[order[start:start + batch_size]]
