"""
Tests for interaction / KG ingestion, splitting and synthetic data.
"""

import numpy as np
import pytest


@pytest.fixture
def write_lines(tmp_path):
    def _write(name, lines):
        path = tmp_path / name
        path.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")
        return path
    return _write


# ── load_interactions ─────────────────────────────────────────────────────────

def test_load_interactions_basic(write_lines):
    from core.data_ingest import load_interactions
    ds = load_interactions(write_lines("r.tsv", ["0\t0", "0\t1", "1\t0"]))
    assert ds.num_users == 2
    assert ds.num_items == 2
    assert len(ds.interactions) == 3
    assert ds.report.line_count == 3


def test_load_interactions_collapses_duplicates(write_lines):
    from core.data_ingest import load_interactions
    ds = load_interactions(write_lines("r.tsv", ["0\t0", "0\t0", "1\t1"]))
    assert len(ds.interactions) == 2
    assert ds.report.duplicate_count == 1


def test_load_interactions_parse_error_has_line_number(write_lines):
    from core.data_ingest import load_interactions
    from core.errors import DatasetParseError
    with pytest.raises(DatasetParseError) as exc:
        load_interactions(write_lines("r.tsv", ["a\t0"]))
    assert exc.value.line_no == 1

    with pytest.raises(DatasetParseError) as exc:
        load_interactions(write_lines("r2.tsv", ["0\t0", "", "1\t-3"]))
    assert exc.value.line_no == 3


def test_load_interactions_empty_file(write_lines):
    from core.data_ingest import load_interactions
    from core.errors import EmptyDatasetError
    with pytest.raises(EmptyDatasetError):
        load_interactions(write_lines("r.tsv", []))


def test_load_interactions_reindexes_sparse_ids(write_lines):
    from core.data_ingest import load_interactions
    ds = load_interactions(write_lines("r.tsv", ["10\t5", "30\t7", "10\t7"]))
    assert ds.num_users == 2
    assert ds.num_items == 2
    assert ds.report.reindexed
    assert ds.user_ids.tolist() == [10, 30]
    assert ds.item_ids.tolist() == [5, 7]


# ── load_kg_triples ───────────────────────────────────────────────────────────

def test_load_kg_triples_basic(write_lines):
    from core.data_ingest import load_kg_triples
    kg = load_kg_triples(write_lines("kg.tsv", ["0\t0\t5", "5\t1\t6"]), item_count=3)
    assert kg.num_entities == 7
    assert kg.num_relations == 2
    assert kg.num_triples == 2
    assert kg.item_to_entity.tolist() == [0, 1, 2]


def test_load_kg_triples_dedup_and_empty(write_lines):
    from core.data_ingest import load_kg_triples
    kg = load_kg_triples(write_lines("kg.tsv", ["0\t0\t5", "0\t0\t5"]), item_count=2)
    assert kg.num_triples == 1
    empty = load_kg_triples(write_lines("empty.tsv", []), item_count=4)
    assert empty.num_triples == 0
    assert empty.num_entities == 4
    assert empty.report.empty


def test_load_kg_triples_follows_reindexed_items(write_lines):
    from core.data_ingest import load_interactions, load_kg_triples
    ds = load_interactions(write_lines("data.tsv", ["0\t10", "1\t20", "0\t20"]))
    assert ds.num_items == 2 and ds.item_ids.tolist() == [10, 20]
    kg = load_kg_triples(write_lines("kg.tsv", ["10\t0\t30", "20\t0\t30", "20\t1\t5"]),
                         ds.num_items, item_ids=ds.item_ids)
    # items 10, 20 -> 0, 1; attributes 5, 30 -> 2, 3
    assert kg.num_entities == 4
    assert kg.triples.tolist() == [[0, 0, 3], [1, 0, 3], [1, 1, 2]]
    neighbors = kg.neighbors()
    assert neighbors[0].tolist() == [3]
    assert neighbors[1].tolist() == [2, 3]
    assert kg.item_to_entity.tolist() == [0, 1]


def test_load_kg_triples_without_item_ids_keeps_raw_ids(write_lines):
    from core.data_ingest import load_kg_triples
    kg = load_kg_triples(write_lines("kg.tsv", ["1\t0\t9"]), item_count=2, item_ids=None)
    assert kg.triples.tolist() == [[1, 0, 9]]
    assert kg.num_entities == 10


def test_load_kg_triples_malformed(write_lines):
    from core.data_ingest import load_kg_triples
    from core.errors import DatasetParseError
    with pytest.raises(DatasetParseError):
        load_kg_triples(write_lines("kg.tsv", ["0\t1"]), item_count=2)


# ── split_dataset ─────────────────────────────────────────────────────────────

def test_split_ten_interactions_is_8_1_1():
    from core.data_ingest import InteractionDataset, split_dataset
    ds = InteractionDataset.from_pairs([(0, i) for i in range(10)], num_items=10)
    out = split_dataset(ds, seed=3)
    assert (len(out.train), len(out.val), len(out.test)) == (8, 1, 1)


def test_split_small_users_keep_train():
    from core.data_ingest import InteractionDataset, split_dataset
    ds = InteractionDataset.from_pairs([(0, 0), (0, 1), (1, 0), (1, 1), (1, 2)], num_items=3)
    out = split_dataset(ds, seed=0)
    assert set(map(tuple, out.train[out.train[:, 0] == 0].tolist())) == {(0, 0), (0, 1)}
    assert (out.val[:, 0] == 1).sum() == 1
    assert (out.test[:, 0] == 1).sum() == 1


def test_split_is_partition_and_deterministic():
    from core.data_ingest import gen_synthetic_longtail, split_dataset
    ds, _ = gen_synthetic_longtail(30, 40, 12, 1.0, 3, 2, seed=5)
    a = split_dataset(ds, seed=11)
    b = split_dataset(ds, seed=11)
    assert a.same_content(b)
    parts = [set(map(tuple, getattr(a, s).tolist())) for s in ("train", "val", "test")]
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert parts[0] | parts[1] | parts[2] == set(map(tuple, ds.interactions.tolist()))
    assert np.array_equal(a.item_popularity, np.bincount(a.train[:, 1], minlength=40))


# ── degree_histogram ──────────────────────────────────────────────────────────

def test_degree_histogram_examples():
    from core.data_ingest import InteractionDataset, degree_histogram
    ds = InteractionDataset.from_pairs([(0, 0), (1, 0), (2, 0), (0, 1)], num_items=3)
    assert degree_histogram(ds) == {3: 1, 1: 1}
    assert sum(degree_histogram(ds).values()) == 2
    empty = InteractionDataset.from_pairs(np.zeros((0, 2), dtype=np.int64), num_users=2, num_items=2)
    assert degree_histogram(empty) == {}


def test_dataset_stats_payload():
    from core.data_ingest import InteractionDataset, dataset_stats
    ds = InteractionDataset.from_pairs([(0, 0), (1, 1)], num_items=2)
    stats = dataset_stats(ds)
    assert stats["num_users"] == 2
    assert stats["sparsity"] == pytest.approx(0.5)
    assert stats["degree_histogram"] == {"1": 2}


# ── synthetic generator ───────────────────────────────────────────────────────

def test_synthetic_counts_and_determinism():
    from core.data_ingest import gen_synthetic_longtail
    ds, kg = gen_synthetic_longtail(10, 20, 5, 1.0, 2, 2, seed=1)
    assert len(ds.interactions) == 50
    assert all(c == 5 for c in np.bincount(ds.interactions[:, 0]))
    again, kg_again = gen_synthetic_longtail(10, 20, 5, 1.0, 2, 2, seed=1)
    assert again.same_content(ds)
    assert np.array_equal(kg.triples, kg_again.triples)
    assert kg.num_entities == 30
    assert kg.num_relations == 2


def test_synthetic_is_long_tailed():
    from core.data_ingest import gen_synthetic_longtail
    ds, _ = gen_synthetic_longtail(300, 200, 10, 1.1, 4, 3, seed=2)
    counts = np.sort(np.bincount(ds.interactions[:, 1], minlength=200))[::-1]
    assert counts[:20].sum() > counts[-100:].sum()


def test_synthetic_infeasible_density():
    from core.data_ingest import gen_synthetic_longtail
    from core.errors import InfeasibleDensityError
    with pytest.raises(InfeasibleDensityError):
        gen_synthetic_longtail(5, 10, 10, 1.0, 2, 2, seed=0)


# ── writers ───────────────────────────────────────────────────────────────────

def test_write_and_reload_splits(tmp_path):
    from core.data_ingest import gen_synthetic_longtail, load_interactions, split_dataset, write_splits
    ds, _ = gen_synthetic_longtail(20, 30, 6, 1.0, 2, 2, seed=4)
    split = split_dataset(ds, seed=4)
    paths = write_splits(split, tmp_path / "splits")
    reloaded = load_interactions(paths["test"])
    assert len(reloaded.interactions) == len(split.test)
    assert (tmp_path / "splits" / "train.tsv").read_bytes().endswith(b"\n")


def test_write_kg_triples(tmp_path):
    from core.data_ingest import gen_synthetic_longtail, load_kg_triples, write_kg_triples
    _, kg = gen_synthetic_longtail(5, 8, 3, 1.0, 2, 2, seed=0)
    write_kg_triples(kg, tmp_path / "kg.tsv")
    again = load_kg_triples(tmp_path / "kg.tsv", item_count=8)
    assert np.array_equal(again.triples, kg.triples)
