"""
Interaction and knowledge-graph ingestion.

Handles:
- TSV loading with validation (interactions, KG triples)
- Per-user 8:1:1 splitting
- Degree statistics
- Synthetic long-tail datasets with an attribute KG
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from core.errors import DatasetParseError, EmptyDatasetError, InfeasibleDensityError

logger = logging.getLogger(__name__)

_EMPTY_PAIRS = np.zeros((0, 2), dtype=np.int64)


# ── Domain types ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class IngestReport:
    """What happened while reading a file."""
    path: str
    line_count: int
    record_count: int
    duplicate_count: int
    reindexed: bool = False
    empty: bool = False

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "line_count": self.line_count,
            "record_count": self.record_count,
            "duplicate_count": self.duplicate_count,
            "reindexed": self.reindexed,
            "empty": self.empty,
        }


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """
    Implicit user-item interactions and their splits.

    Pair arrays are int64 of shape (K, 2) sorted by (user, item).
    Before split_dataset runs, every interaction sits in train.
    """
    num_users: int
    num_items: int
    interactions: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    item_popularity: np.ndarray
    user_ids: Optional[np.ndarray] = None   # dense index -> raw id (None = identity)
    item_ids: Optional[np.ndarray] = None
    report: Optional[IngestReport] = field(default=None, compare=False)

    @classmethod
    def from_pairs(cls, pairs, num_users: Optional[int] = None, num_items: Optional[int] = None,
                   **kwargs) -> "InteractionDataset":
        """Build an unsplit dataset (everything in train) from (user, item) pairs."""
        arr = _sorted_unique(np.asarray(pairs, dtype=np.int64).reshape(-1, 2))
        m = num_users if num_users is not None else (int(arr[:, 0].max()) + 1 if len(arr) else 0)
        n = num_items if num_items is not None else (int(arr[:, 1].max()) + 1 if len(arr) else 0)
        return cls(
            num_users=m,
            num_items=n,
            interactions=arr,
            train=arr.copy(),
            val=_EMPTY_PAIRS.copy(),
            test=_EMPTY_PAIRS.copy(),
            item_popularity=compute_popularity(arr, n),
            **kwargs,
        )

    @property
    def sparsity(self) -> float:
        cells = self.num_users * self.num_items
        return 1.0 - len(self.interactions) / cells if cells else 1.0

    def train_matrix(self) -> sp.csr_matrix:
        """Binary M x N CSR matrix of the train split."""
        data = np.ones(len(self.train), dtype=np.float64)
        return sp.csr_matrix(
            (data, (self.train[:, 0], self.train[:, 1])),
            shape=(self.num_users, self.num_items),
        )

    def positives(self, split: str) -> list[np.ndarray]:
        """Per-user sorted item arrays for one split."""
        pairs = getattr(self, split)
        out: list[np.ndarray] = [np.zeros(0, dtype=np.int64) for _ in range(self.num_users)]
        if len(pairs) == 0:
            return out
        bounds = np.searchsorted(pairs[:, 0], np.arange(self.num_users + 1))
        for u in range(self.num_users):
            out[u] = pairs[bounds[u]:bounds[u + 1], 1]
        return out

    def same_content(self, other: "InteractionDataset") -> bool:
        return (
            self.num_users == other.num_users
            and self.num_items == other.num_items
            and all(np.array_equal(getattr(self, f), getattr(other, f))
                    for f in ("interactions", "train", "val", "test", "item_popularity"))
        )


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """KG triples (h, r, t). Items 0..N-1 are entities 0..N-1 (identity mapping)."""
    num_entities: int
    num_relations: int
    triples: np.ndarray                 # (T, 3) int64, deduplicated
    item_to_entity: np.ndarray          # (N,) int64
    report: Optional[IngestReport] = field(default=None, compare=False)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    def triple_set(self) -> set[tuple[int, int, int]]:
        return {tuple(map(int, row)) for row in self.triples}

    def neighbors(self) -> list[np.ndarray]:
        """One-hop, relation-agnostic neighbor entities per entity (self excluded, sorted)."""
        buckets: list[set[int]] = [set() for _ in range(self.num_entities)]
        for h, _, t in self.triples:
            if h != t:
                buckets[int(h)].add(int(t))
                buckets[int(t)].add(int(h))
        return [np.array(sorted(b), dtype=np.int64) for b in buckets]


# ── Helpers ───────────────────────────────────────────────────────────────────

def _sorted_unique(pairs: np.ndarray) -> np.ndarray:
    if len(pairs) == 0:
        return pairs.reshape(0, pairs.shape[1] if pairs.ndim == 2 else 2).astype(np.int64)
    return np.unique(pairs, axis=0)


def compute_popularity(train: np.ndarray, num_items: int) -> np.ndarray:
    """Exact per-item train interaction counts."""
    if len(train) == 0:
        return np.zeros(num_items, dtype=np.int64)
    return np.bincount(train[:, 1], minlength=num_items).astype(np.int64)


def _parse_ints(path: str, line_no: int, line: str, expected: int) -> tuple[int, ...]:
    parts = line.split()
    if len(parts) != expected:
        raise DatasetParseError(path, line_no, line, f"expected {expected} fields, got {len(parts)}")
    try:
        values = tuple(int(p) for p in parts)
    except ValueError:
        raise DatasetParseError(path, line_no, line, "non-integer field")
    if any(v < 0 for v in values):
        raise DatasetParseError(path, line_no, line, "negative id")
    return values


def _dense_index(ids: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Map ids to 0..K-1 when they have gaps; identity otherwise."""
    uniq = np.unique(ids)
    if len(uniq) == int(uniq.max()) + 1:
        return ids, uniq, False
    return np.searchsorted(uniq, ids), uniq, True


# ── Loading ───────────────────────────────────────────────────────────────────

def load_interactions(path) -> InteractionDataset:
    """
    Load "user_id<TAB>item_id" lines into an unsplit dataset.

    Args:
        path: TSV file path

    Returns:
        InteractionDataset with every interaction in train and an IngestReport

    Raises:
        DatasetParseError: Malformed line (carries the line number)
        EmptyDatasetError: No interaction in the file
    """
    path = str(path)
    rows: list[tuple[int, ...]] = []
    line_count = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line_count = line_no
            if not line.strip():
                continue
            rows.append(_parse_ints(path, line_no, line.rstrip("\n"), 2))
    if not rows:
        raise EmptyDatasetError(f"{path}: no interactions")

    raw = np.asarray(rows, dtype=np.int64)
    pairs = _sorted_unique(raw)
    duplicates = len(raw) - len(pairs)

    users, user_ids, users_reindexed = _dense_index(pairs[:, 0])
    items, item_ids, items_reindexed = _dense_index(pairs[:, 1])
    reindexed = users_reindexed or items_reindexed
    if reindexed:
        logger.warning("Sparse ids in %s re-indexed densely (users=%s, items=%s)",
                       path, users_reindexed, items_reindexed)
        pairs = _sorted_unique(np.stack([users, items], axis=1))

    report = IngestReport(path, line_count, len(pairs), duplicates, reindexed=reindexed)
    logger.info("Loaded %d interactions from %s (%d duplicates)", len(pairs), path, duplicates)
    return InteractionDataset.from_pairs(
        pairs,
        num_users=len(user_ids),
        num_items=len(item_ids),
        user_ids=user_ids if users_reindexed else None,
        item_ids=item_ids if items_reindexed else None,
        report=report,
    )


def _kg_from_triples(triples: np.ndarray, item_count: int,
                     report: Optional[IngestReport] = None) -> KnowledgeGraph:
    triples = _sorted_unique(triples.reshape(-1, 3)) if len(triples) else np.zeros((0, 3), dtype=np.int64)
    max_entity = int(max(triples[:, 0].max(), triples[:, 2].max())) if len(triples) else -1
    num_relations = int(triples[:, 1].max()) + 1 if len(triples) else 0
    return KnowledgeGraph(
        num_entities=max(max_entity + 1, item_count),
        num_relations=num_relations,
        triples=triples,
        item_to_entity=np.arange(item_count, dtype=np.int64),
        report=report,
    )


def _remap_entities(triples: np.ndarray, item_ids: np.ndarray) -> np.ndarray:
    """
    Rewrite raw entity ids so raw item ids land on their dense item index.

    Entities that are not items are renumbered from len(item_ids) upwards in
    raw-id order; relation ids are untouched.
    """
    if len(triples) == 0:
        return triples
    items = np.asarray(item_ids, dtype=np.int64)
    entities = np.unique(triples[:, [0, 2]])
    pos = np.searchsorted(items, entities)
    is_item = (pos < len(items)) & (items[np.minimum(pos, len(items) - 1)] == entities)
    mapped = np.empty(len(entities), dtype=np.int64)
    mapped[is_item] = pos[is_item]
    mapped[~is_item] = len(items) + np.arange(int((~is_item).sum()), dtype=np.int64)
    out = triples.copy()
    for col in (0, 2):
        out[:, col] = mapped[np.searchsorted(entities, triples[:, col])]
    return out


def load_kg_triples(path, item_count: int, item_ids: Optional[np.ndarray] = None) -> KnowledgeGraph:
    """
    Load "head<TAB>relation<TAB>tail" lines.

    Without item_ids, entity ids below item_count are items (identity
    mapping). With item_ids (dense index -> raw item id, as kept by a
    re-indexed InteractionDataset), raw item ids are mapped to their dense
    index and every other entity is shifted above item_count. Entity and
    relation counts are inferred from the largest ids after mapping.

    Raises:
        DatasetParseError: Malformed line
    """
    path = str(path)
    rows: list[tuple[int, ...]] = []
    line_count = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line_count = line_no
            if not line.strip():
                continue
            rows.append(_parse_ints(path, line_no, line.rstrip("\n"), 3))

    raw = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    if item_ids is not None:
        raw = _remap_entities(raw, item_ids)
        logger.info("KG entities of %s mapped onto %d re-indexed items", path, item_count)
    unique_count = len(_sorted_unique(raw)) if len(raw) else 0
    report = IngestReport(path, line_count, unique_count, len(raw) - unique_count,
                          empty=unique_count == 0)
    if report.empty:
        logger.warning("KG file %s holds no triples", path)
    kg = _kg_from_triples(raw, item_count, report)
    logger.info("Loaded KG: %d entities, %d relations, %d triples",
                kg.num_entities, kg.num_relations, kg.num_triples)
    return kg


# ── Writing ───────────────────────────────────────────────────────────────────

def write_interactions(pairs: np.ndarray, path) -> None:
    """Write (user, item) pairs as TSV lines, LF endings, no header."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for u, i in pairs:
            f.write(f"{int(u)}\t{int(i)}\n")


def write_kg_triples(kg: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for h, r, t in kg.triples:
            f.write(f"{int(h)}\t{int(r)}\t{int(t)}\n")


def write_splits(ds: InteractionDataset, out_dir) -> dict[str, str]:
    """Write train/val/test TSV files into out_dir; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split in ("train", "val", "test"):
        target = out / f"{split}.tsv"
        write_interactions(getattr(ds, split), target)
        paths[split] = str(target)
    return paths


# ── Splitting & statistics ────────────────────────────────────────────────────

def _holdout_size(n: int) -> int:
    # round half up of n/10, at least one
    return max(1, int(math.floor(n / 10 + 0.5)))


def split_dataset(ds: InteractionDataset, seed: int) -> InteractionDataset:
    """
    Per-user random 8:1:1 partition.

    Users with fewer than 3 interactions keep everything in train; otherwise
    val and test each get max(1, round(n/10)) items.

    Args:
        ds: Dataset (its current splits are ignored)
        seed: RNG seed; identical (dataset, seed) gives identical splits

    Returns:
        New InteractionDataset with splits and train popularity filled
    """
    rng = np.random.default_rng(seed)
    pairs = ds.interactions
    bounds = np.searchsorted(pairs[:, 0], np.arange(ds.num_users + 1))
    train, val, test = [], [], []
    for u in range(ds.num_users):
        block = pairs[bounds[u]:bounds[u + 1]]
        n = len(block)
        if n == 0:
            continue
        if n < 3:
            train.append(block)
            continue
        order = rng.permutation(n)
        k = _holdout_size(n)
        test.append(block[order[:k]])
        val.append(block[order[k:2 * k]])
        train.append(block[order[2 * k:]])

    def stack(parts):
        return _sorted_unique(np.concatenate(parts)) if parts else _EMPTY_PAIRS.copy()

    train_arr = stack(train)
    return replace(
        ds,
        train=train_arr,
        val=stack(val),
        test=stack(test),
        item_popularity=compute_popularity(train_arr, ds.num_items),
    )


def degree_histogram(ds: InteractionDataset) -> dict[int, int]:
    """
    Item-degree histogram over the train split (degree -> number of items).

    Items without train interactions are left out, so an empty train split
    gives an empty histogram.
    """
    counts = compute_popularity(ds.train, ds.num_items)
    degrees, node_counts = np.unique(counts[counts > 0], return_counts=True)
    return {int(d): int(c) for d, c in zip(degrees, node_counts)}


def dataset_stats(ds: InteractionDataset) -> dict:
    """Stats payload for the `stats` command."""
    return {
        "degree_histogram": {str(k): v for k, v in degree_histogram(ds).items()},
        "sparsity": ds.sparsity,
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "num_interactions": int(len(ds.interactions)),
        "num_train": int(len(ds.train)),
    }


# ── Synthetic long-tail data ──────────────────────────────────────────────────

def _zipf_probabilities(n: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    """Probabilities proportional to rank^-exponent, ranks shuffled over ids."""
    weights = np.arange(1, n + 1, dtype=np.float64) ** (-exponent)
    probs = np.empty(n, dtype=np.float64)
    probs[rng.permutation(n)] = weights / weights.sum()
    return probs


def gen_synthetic_longtail(num_users: int, num_items: int, interactions_per_user: int,
                           zipf_exponent: float, kg_relations: int, kg_triples_per_item: int,
                           seed: int) -> tuple[InteractionDataset, KnowledgeGraph]:
    """
    Generate a Zipf-distributed interaction set and an attribute KG.

    Args:
        num_users: M
        num_items: N
        interactions_per_user: Distinct items per user
        zipf_exponent: s > 0; item i is drawn with probability ~ rank(i)^-s
        kg_relations: Relation count of the attribute KG
        kg_triples_per_item: Attribute links per item
        seed: RNG seed

    Returns:
        (unsplit dataset, KG). Attribute entities are N .. N + N//2 - 1 and are
        shared across items through Zipf sampling, so tail items get semantic
        neighbors.

    Raises:
        InfeasibleDensityError: interactions_per_user >= num_items
    """
    for name, value in (("num_users", num_users), ("num_items", num_items),
                        ("interactions_per_user", interactions_per_user),
                        ("kg_relations", kg_relations), ("kg_triples_per_item", kg_triples_per_item)):
        if value <= 0:
            raise ValueError(f"{name} must be positive, got {value}")
    if zipf_exponent <= 0:
        raise ValueError(f"zipf_exponent must be positive, got {zipf_exponent}")
    if interactions_per_user >= num_items:
        raise InfeasibleDensityError(
            f"interactions_per_user ({interactions_per_user}) must be below num_items ({num_items})"
        )

    rng = np.random.default_rng(seed)
    item_probs = _zipf_probabilities(num_items, zipf_exponent, rng)
    pairs = np.empty((num_users * interactions_per_user, 2), dtype=np.int64)
    for u in range(num_users):
        # sampling without replacement resamples colliding items
        chosen = rng.choice(num_items, size=interactions_per_user, replace=False, p=item_probs)
        rows = slice(u * interactions_per_user, (u + 1) * interactions_per_user)
        pairs[rows, 0] = u
        pairs[rows, 1] = chosen

    num_attributes = max(1, num_items // 2)
    links = min(int(math.ceil(kg_triples_per_item)), num_attributes)
    attr_probs = _zipf_probabilities(num_attributes, zipf_exponent, rng)
    triples = []
    for i in range(num_items):
        attrs = rng.choice(num_attributes, size=links, replace=False, p=attr_probs)
        for a in attrs:
            triples.append((i, int(a) % kg_relations, num_items + int(a)))

    ds = InteractionDataset.from_pairs(pairs, num_users=num_users, num_items=num_items)
    kg = _kg_from_triples(np.asarray(triples, dtype=np.int64), num_items)
    kg = replace(kg, num_entities=num_items + num_attributes, num_relations=kg_relations)
    logger.info("Generated synthetic dataset: %d users, %d items, %d interactions, %d triples",
                num_users, num_items, len(ds.interactions), kg.num_triples)
    return ds, kg
