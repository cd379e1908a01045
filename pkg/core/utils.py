"""
Utility functions shared by the SPARK pipeline
"""

import hashlib
import json
import logging
import os
import random
from collections import Counter
from typing import Iterable, Optional

import numpy as np
import torch

# Counts degenerate numeric events (zero projections, empty popularity, ...).
diagnostics: Counter = Counter()

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """
    Configure root logging once for CLI and scripts.

    Args:
        level: Level name; falls back to SPARK_LOG_LEVEL, then INFO
    """
    from core.config import get_settings

    name = (level or get_settings().log_level).upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT)


def seed_everything(seed: int, threads: Optional[int] = None, deterministic: bool = True) -> None:
    """
    Seed python, numpy and torch, and pin torch's thread pool.

    Args:
        seed: Global seed
        threads: Intra-op thread count (None keeps torch's default, 0 uses
            every available core)
        deterministic: Force deterministic torch kernels
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if threads is not None:
        torch.set_num_threads(threads if threads > 0 else available_threads())
    torch.use_deterministic_algorithms(deterministic, warn_only=True)


def torch_dtype(name: str) -> torch.dtype:
    """Map a config dtype name to a torch dtype."""
    if name == "float64":
        return torch.float64
    if name == "float32":
        return torch.float32
    raise ValueError(f"Unsupported dtype: {name}")


def sha256_hex(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def canonical_json(obj) -> str:
    """JSON with sorted keys and no whitespace, used for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def parse_int_list(text: str) -> list[int]:
    """
    Parse a comma list such as "10,20".

    Args:
        text: Comma separated integers

    Returns:
        List of ints (empty items skipped)
    """
    return [int(part) for part in text.split(",") if part.strip()]


def available_threads() -> int:
    return os.cpu_count() or 1


def mean_std(values: Iterable[float]) -> tuple[float, float]:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return 0.0, 0.0
    return float(arr.mean()), float(arr.std())
