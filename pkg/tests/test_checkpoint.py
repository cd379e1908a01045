"""
Tests for the binary checkpoint format.
"""

import struct

import pytest
import torch


def _trained(epochs=1, **overrides):
    from core.training import build_toy_state, train_epoch
    state, data, _ = build_toy_state(**overrides)
    for _ in range(epochs):
        train_epoch(state, data, state.cfg)
    return state, data


# ── round trip ────────────────────────────────────────────────────────────────

def test_roundtrip_restores_model_and_optimizer(tmp_path):
    from core.checkpoint import load_checkpoint, save_checkpoint
    from core.training import build_toy_state
    state, _ = _trained(learning_rate=1e-2)
    path = tmp_path / "toy.sprk"
    save_checkpoint(state, path, state.cfg.config_hash())

    fresh, _, _ = build_toy_state(learning_rate=1e-2, seed=99)
    load_checkpoint(fresh, path, expected_hash=state.cfg.config_hash())
    for (name, a), (_, b) in zip(state.model.state_dict().items(), fresh.model.state_dict().items()):
        assert torch.equal(a, b), name
    assert fresh.epoch == 1 and fresh.step == state.step
    params = dict(state.model.named_parameters())
    restored = dict(fresh.model.named_parameters())
    for name, p in params.items():
        if p in state.optimizer.state:
            assert torch.equal(state.optimizer.state[p]["exp_avg"],
                               fresh.optimizer.state[restored[name]]["exp_avg"])


def test_checkpoint_bytes_are_stable(tmp_path):
    from core.checkpoint import save_checkpoint
    state, _ = _trained()
    a, b = tmp_path / "a.sprk", tmp_path / "b.sprk"
    save_checkpoint(state, a, state.cfg.config_hash())
    save_checkpoint(state, b, state.cfg.config_hash())
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes()[:4] == b"SPRK"


def test_resume_matches_uninterrupted_run(tmp_path):
    from core.checkpoint import load_checkpoint, save_checkpoint
    from core.training import build_toy_state, train_epoch
    straight, data = _trained(epochs=2, learning_rate=1e-2)

    first, _ = _trained(epochs=1, learning_rate=1e-2)
    path = tmp_path / "mid.sprk"
    save_checkpoint(first, path, first.cfg.config_hash())
    resumed, data2, _ = build_toy_state(learning_rate=1e-2)
    load_checkpoint(resumed, path)
    train_epoch(resumed, data2, resumed.cfg)
    for (name, a), (_, b) in zip(straight.model.named_parameters(), resumed.model.named_parameters()):
        assert torch.allclose(a, b, atol=1e-12), name


def test_read_checkpoint_lists_records(tmp_path):
    from core.checkpoint import read_checkpoint, save_checkpoint
    state, _ = _trained()
    path = tmp_path / "toy.sprk"
    save_checkpoint(state, path, state.cfg.config_hash())
    config_hash, records = read_checkpoint(path)
    assert config_hash == state.cfg.config_hash()
    assert records["model.tucker.core"].shape == (4, 4, 4)
    assert float(records["meta.epoch"]) == 1.0
    assert any(name.endswith(".exp_avg_sq") for name in records)


def test_scalar_records_keep_rank_zero(tmp_path):
    from core.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
    from core.training import build_toy_state
    state, _ = _trained(learning_rate=1e-2)
    path = tmp_path / "toy.sprk"
    save_checkpoint(state, path, state.cfg.config_hash())
    _, records = read_checkpoint(path)
    for name in ("model.fusion.gate_a", "model.fusion.gate_b", "meta.epoch", "meta.step"):
        assert records[name].shape == (), name
    assert records["model.fusion.gate_a"].item() == state.model.fusion.gate_a.item()

    fresh, _, _ = build_toy_state(learning_rate=1e-2, seed=99)
    load_checkpoint(fresh, path)
    assert fresh.model.fusion.gate_a.shape == ()
    assert fresh.model.fusion.gate_b.item() == state.model.fusion.gate_b.item()


# ── malformed files ───────────────────────────────────────────────────────────

def test_config_hash_mismatch_rejected(tmp_path):
    from core.checkpoint import load_checkpoint, save_checkpoint
    from core.errors import CheckpointError
    state, _ = _trained()
    path = tmp_path / "toy.sprk"
    save_checkpoint(state, path, state.cfg.config_hash())
    with pytest.raises(CheckpointError):
        load_checkpoint(state, path, expected_hash="0" * 64)


def test_bad_magic_rejected(tmp_path):
    from core.checkpoint import read_checkpoint
    from core.errors import CheckpointError
    path = tmp_path / "junk.sprk"
    path.write_bytes(b"NOPE" + struct.pack("<I", 1) + b"\x00" * 36)
    with pytest.raises(CheckpointError):
        read_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    from core.checkpoint import read_checkpoint, save_checkpoint
    from core.errors import CheckpointError
    state, _ = _trained()
    path = tmp_path / "toy.sprk"
    save_checkpoint(state, path, state.cfg.config_hash())
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CheckpointError):
        read_checkpoint(path)


def test_missing_file_rejected(tmp_path):
    from core.checkpoint import read_checkpoint
    from core.errors import CheckpointError
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "absent.sprk")
