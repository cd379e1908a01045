"""
Full-ranking evaluation: Recall@N, NDCG@N, head/tail slices and embedding export.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from core.data_ingest import InteractionDataset
from core.errors import EmptyRelevantSetError

logger = logging.getLogger(__name__)

SLICES = ("all", "head", "tail")


# ── Metrics ───────────────────────────────────────────────────────────────────

def recall_at_n(ranked: Sequence[int], relevant: Iterable[int], n: int) -> float:
    """|top-n intersect relevant| / |relevant|."""
    relevant = set(relevant)
    if not relevant:
        raise EmptyRelevantSetError("recall_at_n: empty relevant set")
    hits = sum(1 for item in list(ranked)[:n] if item in relevant)
    return hits / len(relevant)


def _idcg(k: int) -> float:
    return sum(1.0 / math.log2(i + 2) for i in range(k))


def ndcg_at_n(ranked: Sequence[int], relevant: Iterable[int], n: int) -> float:
    """
    Binary-relevance NDCG with discount log2(k + 1) at 1-indexed position k.

    The ideal ranking places min(|relevant|, n) relevant items first.
    """
    relevant = set(relevant)
    if not relevant:
        raise EmptyRelevantSetError("ndcg_at_n: empty relevant set")
    dcg = sum(1.0 / math.log2(pos + 2) for pos, item in enumerate(list(ranked)[:n]) if item in relevant)
    return dcg / _idcg(min(len(relevant), n))


def head_tail_split(ds: InteractionDataset, fraction: float = 0.1) -> tuple[set[int], set[int]]:
    """
    Head and tail item sets by train popularity.

    Items are ordered by count descending, ties by ascending id; head takes the
    first ceil(fraction * N), tail the last ceil(fraction * N).
    """
    if not 0.0 < fraction <= 0.5:
        raise ValueError(f"fraction must lie in (0, 0.5], got {fraction}")
    counts = np.asarray(ds.item_popularity)
    n = len(counts)
    order = np.lexsort((np.arange(n), -counts))
    k = int(math.ceil(fraction * n))
    return set(order[:k].tolist()), set(order[n - k:].tolist())


# ── Reports ───────────────────────────────────────────────────────────────────

@dataclass
class EvalReport:
    """Averaged metrics over evaluated users, overall and per popularity slice."""
    cutoffs: list[int]
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    per_slice: dict[str, dict[str, dict[int, float]]] = field(default_factory=dict)
    slice_users: dict[str, int] = field(default_factory=dict)
    num_evaluated_users: int = 0

    def metric(self, name: str, n: int, slice_name: str = "all") -> float:
        return self.per_slice[slice_name][name][n]

    def to_dict(self) -> dict:
        return {
            "recall": {str(n): v for n, v in self.recall.items()},
            "ndcg": {str(n): v for n, v in self.ndcg.items()},
            "per_slice": {
                s: {m: {str(n): v for n, v in vals.items()} for m, vals in metrics.items()}
                for s, metrics in self.per_slice.items()
            },
            "slice_users": dict(self.slice_users),
            "num_evaluated_users": self.num_evaluated_users,
        }


class _Accumulator:
    def __init__(self, cutoffs: Sequence[int]):
        self.cutoffs = list(cutoffs)
        self.sums = {s: {"recall": dict.fromkeys(cutoffs, 0.0), "ndcg": dict.fromkeys(cutoffs, 0.0)}
                     for s in SLICES}
        self.users = dict.fromkeys(SLICES, 0)

    def add(self, slice_name: str, ranked: np.ndarray, relevant: set[int]) -> None:
        self.users[slice_name] += 1
        for n in self.cutoffs:
            self.sums[slice_name]["recall"][n] += recall_at_n(ranked, relevant, n)
            self.sums[slice_name]["ndcg"][n] += ndcg_at_n(ranked, relevant, n)

    def report(self) -> EvalReport:
        per_slice = {}
        for s in SLICES:
            count = self.users[s]
            per_slice[s] = {
                m: {n: (v / count if count else 0.0) for n, v in vals.items()}
                for m, vals in self.sums[s].items()
            }
        return EvalReport(
            cutoffs=self.cutoffs,
            recall=dict(per_slice["all"]["recall"]),
            ndcg=dict(per_slice["all"]["ndcg"]),
            per_slice=per_slice,
            slice_users=dict(self.users),
            num_evaluated_users=self.users["all"],
        )


def _masked_pairs(ds: InteractionDataset, split: str) -> list[np.ndarray]:
    masked = ds.positives("train")
    if split == "test":
        val = ds.positives("val")
        masked = [np.union1d(a, b) for a, b in zip(masked, val)]
    return masked


def evaluate_scores(score_fn, ds: InteractionDataset, split: str = "test",
                    cutoffs: Sequence[int] = (10, 20), tail_fraction: float = 0.1,
                    user_batch: int = 256) -> EvalReport:
    """
    Full-ranking evaluation over every user with positives in the split.

    Args:
        score_fn: Callable mapping a user-id array to a (U, N) score array
        ds: Split dataset
        split: "test" (train and val masked) or "val" (train masked)
        cutoffs: N values
        tail_fraction: Head/tail slice size

    Returns:
        EvalReport; a user enters the head/tail slice only through its
        relevant items in that slice
    """
    if split not in ("val", "test"):
        raise ValueError(f"split must be 'val' or 'test', got {split!r}")
    cutoffs = sorted(set(int(n) for n in cutoffs))
    top = max(cutoffs)
    head, tail = head_tail_split(ds, tail_fraction)
    relevant_lists = ds.positives(split)
    masked = _masked_pairs(ds, split)
    users = np.array([u for u in range(ds.num_users) if len(relevant_lists[u])], dtype=np.int64)
    acc = _Accumulator(cutoffs)

    for start in range(0, len(users), user_batch):
        chunk = users[start:start + user_batch]
        scores = np.asarray(score_fn(chunk), dtype=np.float64)
        for row, u in enumerate(chunk):
            s = scores[row].copy()
            s[masked[u]] = -np.inf
            order = np.argsort(-s, kind="stable")
            order = order[np.isfinite(s[order])][:top]
            relevant = set(relevant_lists[u].tolist())
            acc.add("all", order, relevant)
            for name, members in (("head", head), ("tail", tail)):
                sliced = relevant & members
                if sliced:
                    acc.add(name, order, sliced)
    return acc.report()


def evaluate_ranking(model, ds: InteractionDataset, split: str = "test",
                     cutoffs: Sequence[int] = (10, 20), tail_fraction: float = 0.1) -> EvalReport:
    """Evaluate a SparkModel with full-catalog scoring."""
    with torch.no_grad():
        prop = model.propagate()

        def score_fn(users):
            return model.full_scores(prop, torch.as_tensor(users)).detach().cpu().numpy()

        return evaluate_scores(score_fn, ds, split, cutoffs, tail_fraction)


# ── Export ────────────────────────────────────────────────────────────────────

def slice_labels(ds: InteractionDataset, tail_fraction: float = 0.1) -> list[str]:
    head, tail = head_tail_split(ds, tail_fraction)
    return ["head" if i in head else "tail" if i in tail else "mid" for i in range(ds.num_items)]


def export_embeddings(model, ds: InteractionDataset, path, tail_fraction: float = 0.1) -> pd.DataFrame:
    """
    Write final Euclidean item embeddings as TSV.

    Columns: item_id, slice (head/tail/mid), popularity, e0 .. e{d_e-1}.
    """
    with torch.no_grad():
        emb = model.propagate().item_final.detach().cpu().numpy()
    item_ids = ds.item_ids if ds.item_ids is not None else np.arange(ds.num_items)
    frame = pd.DataFrame({
        "item_id": item_ids,
        "slice": slice_labels(ds, tail_fraction),
        "popularity": ds.item_popularity,
    })
    coords = pd.DataFrame(emb, columns=[f"e{k}" for k in range(emb.shape[1])])
    frame = pd.concat([frame, coords], axis=1)
    frame.to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n")
    logger.info("Exported %d item embeddings to %s", len(frame), path)
    return frame
