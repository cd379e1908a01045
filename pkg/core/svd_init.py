"""
Spectral initialization of user and item embeddings.

H_user0 = U_s diag(f(sigma)) F_S and H_item0 = V_s diag(f(sigma)) F_S with
f(sigma) = exp(beta * sigma / sigma_max). The truncated factors come from a
randomized subspace iteration over the sparse train matrix.
"""

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import torch
import torch.nn as nn

from core.errors import (
    CheckpointError,
    ConfigError,
    EmptyDatasetError,
    ShapeMismatchError,
    SpectralFilterConfigError,
)
from core.utils import sha256_hex

logger = logging.getLogger(__name__)

FILTER_GUARD = 30.0
CACHE_MAGIC = b"SVDF"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIQQQ")


@dataclass(frozen=True, eq=False)
class SvdFactors:
    """Truncated factors: U (M x k), sigma (k, descending), V (N x k)."""
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def k(self) -> int:
        return len(self.sigma)

    @property
    def normalized_sigma(self) -> np.ndarray:
        top = float(self.sigma[0]) if self.k else 0.0
        return self.sigma / top if top > 0 else np.zeros_like(self.sigma)


# ── Decomposition ─────────────────────────────────────────────────────────────

def truncated_svd(R, k: int, seed: int, oversampling: int = 8, power_iters: int = 4) -> SvdFactors:
    """
    Randomized top-k SVD of a sparse matrix.

    Args:
        R: scipy sparse (or dense) M x N matrix
        k: Rank (k <= min(M, N))
        seed: Seed of the Gaussian test matrix
        oversampling: Extra sketch columns
        power_iters: Subspace iterations, each re-orthonormalized with QR

    Returns:
        SvdFactors with a deterministic sign convention (largest |V| entry of
        every column is positive)

    Raises:
        ConfigError: k out of range
        EmptyDatasetError: R has no nonzero entry
    """
    R = sp.csr_matrix(R, dtype=np.float64)
    m, n = R.shape
    if k < 1 or k > min(m, n):
        raise ConfigError(f"svd rank {k} must lie in [1, min(M, N) = {min(m, n)}]")
    if R.nnz == 0:
        raise EmptyDatasetError("cannot factorize an empty interaction matrix")

    rng = np.random.default_rng(seed)
    sketch = min(k + oversampling, min(m, n))
    omega = rng.standard_normal((n, sketch))
    Q, _ = scipy.linalg.qr(R @ omega, mode="economic")
    for _ in range(power_iters):
        Z, _ = scipy.linalg.qr(R.T @ Q, mode="economic")
        Q, _ = scipy.linalg.qr(R @ Z, mode="economic")

    B = (R.T @ Q).T
    U_small, sigma, Vt = scipy.linalg.svd(B, full_matrices=False)
    U = Q @ U_small[:, :k]
    V = Vt[:k].T.copy()
    sigma = sigma[:k].copy()

    pivots = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    return SvdFactors(U=U * signs, sigma=sigma, V=V * signs)


def relative_residual(R, factors: SvdFactors) -> float:
    """|R - U diag(sigma) V^T|_F / |R|_F."""
    dense = R.toarray() if sp.issparse(R) else np.asarray(R, dtype=np.float64)
    approx = (factors.U * factors.sigma) @ factors.V.T
    return float(np.linalg.norm(dense - approx) / np.linalg.norm(dense))


# ── Filtering & projection ────────────────────────────────────────────────────

def spectral_filter(sigma, beta: float) -> torch.Tensor:
    """
    Element-wise exp(beta * sigma).

    Raises:
        SpectralFilterConfigError: beta * max(sigma) > FILTER_GUARD
    """
    sigma = torch.as_tensor(np.asarray(sigma, dtype=np.float64))
    if not torch.isfinite(sigma).all() or not math.isfinite(beta):
        raise SpectralFilterConfigError("spectral filter inputs must be finite")
    top = float(sigma.max()) if sigma.numel() else 0.0
    if beta * top > FILTER_GUARD:
        raise SpectralFilterConfigError(
            f"beta * sigma_max = {beta * top:.3g} exceeds {FILTER_GUARD}; "
            "use a smaller spectral_beta or normalize sigma"
        )
    return torch.exp(beta * sigma)


def init_embeddings(factors: SvdFactors, params: "SvdInitParams") -> tuple[torch.Tensor, torch.Tensor]:
    """
    Initial user and item embeddings from the filtered factors.

    Args:
        factors: SvdFactors
        params: SvdInitParams (F_S of shape k x d_e, beta)

    Returns:
        (H_user0, H_item0)

    Raises:
        ShapeMismatchError: F_S rows differ from the factor rank
    """
    if params.F_S.shape[0] != factors.k:
        raise ShapeMismatchError(f"F_S has {params.F_S.shape[0]} rows, factors have rank {factors.k}")
    filt = spectral_filter(factors.normalized_sigma, params.beta).to(params.F_S.dtype)
    U = torch.as_tensor(factors.U, dtype=params.F_S.dtype)
    V = torch.as_tensor(factors.V, dtype=params.F_S.dtype)
    return (U * filt) @ params.F_S, (V * filt) @ params.F_S


class SvdInitParams(nn.Module):
    """
    Learnable projection F_S with the filtered factors held as buffers.

    Calling the module returns (H_user0, H_item0).
    """

    def __init__(self, factors: SvdFactors, embed_dim: int, beta: float = 1.0,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        bound = 1.0 / math.sqrt(factors.k)
        self.beta = float(beta)
        self.F_S = nn.Parameter(torch.empty(factors.k, embed_dim, dtype=dtype).uniform_(-bound, bound))
        filt = spectral_filter(factors.normalized_sigma, self.beta).to(dtype)
        self.register_buffer("user_basis", torch.as_tensor(factors.U, dtype=dtype) * filt)
        self.register_buffer("item_basis", torch.as_tensor(factors.V, dtype=dtype) * filt)

    def forward(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.user_basis @ self.F_S, self.item_basis @ self.F_S


class XavierInitParams(nn.Module):
    """Free user/item tables replacing the spectral prior (ablation)."""

    def __init__(self, num_users: int, num_items: int, embed_dim: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.user_table = nn.Parameter(torch.empty(num_users, embed_dim, dtype=dtype))
        self.item_table = nn.Parameter(torch.empty(num_items, embed_dim, dtype=dtype))
        nn.init.xavier_uniform_(self.user_table)
        nn.init.xavier_uniform_(self.item_table)

    def forward(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.user_table, self.item_table


# ── Cache ─────────────────────────────────────────────────────────────────────

def matrix_hash(R) -> str:
    """Content hash of a sparse binary matrix (shape + sorted coordinates)."""
    coo = sp.coo_matrix(R)
    order = np.lexsort((coo.col, coo.row))
    payload = np.asarray(coo.shape, dtype=np.int64).tobytes()
    payload += coo.row[order].astype(np.int64).tobytes() + coo.col[order].astype(np.int64).tobytes()
    return sha256_hex(payload)


def cache_path(cache_dir, R, k: int, seed: int) -> Path:
    return Path(cache_dir) / f"svd_{matrix_hash(R)[:16]}_k{k}_s{seed}.bin"


def save_factors(factors: SvdFactors, path) -> None:
    """Header (magic, version, M, N, k) then row-major float64 U, sigma, V."""
    m, n, k = factors.U.shape[0], factors.V.shape[0], factors.k
    with open(path, "wb") as f:
        f.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, m, n, k))
        for arr in (factors.U, factors.sigma, factors.V):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_factors(path) -> SvdFactors:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated SVD cache")
    magic, version, m, n, k = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise CheckpointError(f"{path}: not an SVD cache file (magic={magic!r}, version={version})")
    expected = _HEADER.size + 8 * (m * k + k + n * k)
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    U = flat[:m * k].reshape(m, k).copy()
    sigma = flat[m * k:m * k + k].copy()
    V = flat[m * k + k:].reshape(n, k).copy()
    return SvdFactors(U=U, sigma=sigma, V=V)


def cached_truncated_svd(R, k: int, seed: int, cache_dir: Optional[str] = None, **kwargs) -> SvdFactors:
    """truncated_svd backed by an optional on-disk cache."""
    if not cache_dir:
        return truncated_svd(R, k, seed, **kwargs)
    path = cache_path(cache_dir, R, k, seed)
    if path.exists():
        logger.info("Loading SVD factors from %s", path)
        return load_factors(path)
    factors = truncated_svd(R, k, seed, **kwargs)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_factors(factors, path)
    logger.info("Cached SVD factors at %s", path)
    return factors
