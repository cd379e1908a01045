"""
Versioned binary checkpoints.

Layout (little endian):
    magic "SPRK" | u32 version | 32-byte config hash | u32 record count
    record: u32 name length | name (utf-8) | u32 rank | u64 dims[rank] | f64 data (row-major)

Records hold every model parameter and buffer, the Adam moments and step
counters, and the loop counters under "meta.*".
"""

import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from core.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"SPRK"
VERSION = 1
_HEAD = struct.Struct("<4sI32sI")


def _encode(records: "OrderedDict[str, np.ndarray]", config_hash: str) -> bytes:
    digest = bytes.fromhex(config_hash)
    if len(digest) != 32:
        raise CheckpointError("config hash must be a SHA-256 hex digest")
    parts = [_HEAD.pack(MAGIC, VERSION, digest, len(records))]
    for name, arr in records.items():
        raw = name.encode("utf-8")
        shape = np.shape(arr)
        # 0-d records keep rank 0
        arr = np.ascontiguousarray(arr, dtype="<f8").reshape(shape)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}Q", *shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def _decode(data: bytes, path: str) -> tuple[str, "OrderedDict[str, np.ndarray]"]:
    if len(data) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, digest, count = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = _HEAD.size
    records: "OrderedDict[str, np.ndarray]" = OrderedDict()
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", data, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", data, offset)
            offset += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(dims)
            offset += 8 * size
            records[name] = arr.copy()
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt record table ({exc})") from exc
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return digest.hex(), records


# ── Public API ────────────────────────────────────────────────────────────────

def state_records(state) -> "OrderedDict[str, np.ndarray]":
    """Flatten a ModelState into named float64 arrays."""
    records: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, tensor in state.model.state_dict().items():
        records[f"model.{name}"] = tensor.detach().cpu().to(torch.float64).numpy()
    names = {id(p): n for n, p in state.model.named_parameters()}
    for group in state.optimizer.param_groups:
        for p in group["params"]:
            slot = state.optimizer.state.get(p)
            if not slot:
                continue
            base = f"optim.{names[id(p)]}"
            for key in ("step", "exp_avg", "exp_avg_sq"):
                records[f"{base}.{key}"] = torch.as_tensor(slot[key]).detach().cpu().to(torch.float64).numpy()
    records["meta.epoch"] = np.array(float(state.epoch))
    records["meta.step"] = np.array(float(state.step))
    records["meta.best_val_recall"] = np.array(float(state.best_val_recall))
    return records


def save_checkpoint(state, path, config_hash: str) -> None:
    """Write the state atomically (temp file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_encode(state_records(state), config_hash))
    tmp.replace(path)
    logger.info("Checkpoint written to %s (epoch %d)", path, state.epoch)


def read_checkpoint(path) -> tuple[str, "OrderedDict[str, np.ndarray]"]:
    """Return (config hash, records) without touching any model."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return _decode(data, str(path))


def load_checkpoint(state, path, expected_hash: Optional[str] = None) -> None:
    """
    Restore parameters, buffers, optimizer moments and counters in place.

    Raises:
        CheckpointError: Malformed file, config hash mismatch or missing tensors
    """
    config_hash, records = read_checkpoint(path)
    if expected_hash is not None and config_hash != expected_hash:
        raise CheckpointError(f"{path}: written for config {config_hash[:12]}, current is {expected_hash[:12]}")

    current = state.model.state_dict()
    restored = {}
    for name, tensor in current.items():
        key = f"model.{name}"
        if key not in records:
            raise CheckpointError(f"{path}: missing tensor {name}")
        arr = records[key]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(f"{path}: shape mismatch for {name}: {arr.shape} vs {tuple(tensor.shape)}")
        restored[name] = torch.as_tensor(arr, dtype=tensor.dtype)
    state.model.load_state_dict(restored)

    for name, p in state.model.named_parameters():
        base = f"optim.{name}"
        if f"{base}.exp_avg" not in records:
            continue
        state.optimizer.state[p] = {
            "step": torch.tensor(float(records[f"{base}.step"])),
            "exp_avg": torch.as_tensor(records[f"{base}.exp_avg"], dtype=p.dtype).clone(),
            "exp_avg_sq": torch.as_tensor(records[f"{base}.exp_avg_sq"], dtype=p.dtype).clone(),
        }
    state.epoch = int(records["meta.epoch"])
    state.step = int(records["meta.step"])
    state.best_val_recall = float(records["meta.best_val_recall"])
    logger.info("Checkpoint %s restored at epoch %d", path, state.epoch)


def best_path(path) -> Path:
    """Location of the best-validation checkpoint next to the periodic one."""
    path = Path(path)
    return path.with_name(path.name + ".best")
