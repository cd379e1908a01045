"""
Lorentz-model hyperbolic geometry.

Points live in R^{d+1} with <x, x>_L = -c and x0 > 0. Every function accepts
batched tensors whose last dimension holds the ambient coordinates and is
computed in float64. The curvature may be passed as a Curvature or a float.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Union

import torch

from core.errors import ManifoldDomainError, ShapeMismatchError

MIN_NORM = 1e-12
TANGENT_TOL = 1e-6
MANIFOLD_TOL = 1e-6
NEAR_COINCIDENT = 1e-2


@dataclass(frozen=True)
class Curvature:
    """Curvature parameter c; the manifold has constant curvature -1/c."""
    c: float = 1.0

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ManifoldDomainError(f"curvature must be positive and finite, got {self.c}")

    @property
    def sqrt_c(self) -> float:
        return math.sqrt(self.c)


CurvatureLike = Union[Curvature, float, int]


def _c(cv: CurvatureLike) -> float:
    return cv.c if isinstance(cv, Curvature) else Curvature(float(cv)).c


def _as_double(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=torch.float64)


# ── Inner products & norms ────────────────────────────────────────────────────

def lorentz_inner(a, b, keepdim: bool = False) -> torch.Tensor:
    """Minkowski inner product -a0*b0 + sum_i a_i*b_i over the last dimension."""
    a, b = _as_double(a), _as_double(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeMismatchError(f"lorentz_inner: lengths differ ({a.shape[-1]} vs {b.shape[-1]})")
    if a.shape[-1] < 2:
        raise ShapeMismatchError(f"lorentz_inner: ambient length must be >= 2, got {a.shape[-1]}")
    prod = a * b
    out = prod[..., 1:].sum(dim=-1, keepdim=keepdim) - prod[..., :1].sum(dim=-1, keepdim=keepdim)
    return out


def tangent_norm(v, keepdim: bool = False) -> torch.Tensor:
    """Lorentz norm of a tangent vector (spacelike, so <v, v>_L >= 0)."""
    return lorentz_inner(v, v, keepdim=keepdim).clamp_min(0.0).sqrt()


def _safe_norm(x: torch.Tensor) -> torch.Tensor:
    # clamped before sqrt so the gradient at zero stays finite
    return (x * x).sum(dim=-1, keepdim=True).clamp_min(MIN_NORM ** 2).sqrt()


# ── Points ────────────────────────────────────────────────────────────────────

def origin(d: int, cv: CurvatureLike = 1.0) -> torch.Tensor:
    """The point (sqrt(c), 0, ..., 0) of the d-dimensional manifold."""
    if d < 1:
        raise ShapeMismatchError(f"origin: dimension must be >= 1, got {d}")
    o = torch.zeros(d + 1, dtype=torch.float64)
    o[0] = math.sqrt(_c(cv))
    return o


def reproject(x, cv: CurvatureLike = 1.0) -> torch.Tensor:
    """Recompute x0 = sqrt(c + |x_spatial|^2) so the point sits on the manifold."""
    x = _as_double(x)
    spatial = x[..., 1:]
    x0 = (_c(cv) + (spatial * spatial).sum(dim=-1, keepdim=True)).sqrt()
    return torch.cat([x0, spatial], dim=-1)


def is_on_manifold(x, cv: CurvatureLike = 1.0, tol: float = MANIFOLD_TOL) -> bool:
    x = _as_double(x)
    c = _c(cv)
    residual = (lorentz_inner(x, x) + c).abs()
    scale = torch.clamp(x[..., 0] ** 2, min=c)
    return bool(torch.all(residual <= tol * scale) and torch.all(x[..., 0] > 0))


def check_on_manifold(x, cv: CurvatureLike = 1.0, tol: float = MANIFOLD_TOL,
                      name: str = "point") -> None:
    """Raise ManifoldDomainError when x violates <x, x>_L = -c or x0 > 0."""
    if not torch.isfinite(_as_double(x)).all():
        raise ManifoldDomainError(f"{name}: non-finite coordinates")
    if not is_on_manifold(x, cv, tol):
        raise ManifoldDomainError(f"{name}: not on the Lorentz manifold (c={_c(cv)})")


def clamp_tangent_norm(u: torch.Tensor, max_norm: float) -> torch.Tensor:
    """Rescale spatial tangent vectors so their norm does not exceed max_norm."""
    norm = _safe_norm(u)
    factor = torch.clamp(max_norm / norm, max=1.0)
    return u * factor


# ── Maps at the origin ────────────────────────────────────────────────────────

def expmap0(u, cv: CurvatureLike = 1.0) -> torch.Tensor:
    """
    Exponential map at the origin for the tangent vector (0, u).

    Args:
        u: Spatial coordinates, shape (..., d)
        cv: Curvature

    Returns:
        Points of shape (..., d+1)
    """
    u = _as_double(u)
    sqrt_c = math.sqrt(_c(cv))
    norm = _safe_norm(u)
    theta = norm / sqrt_c
    x0 = sqrt_c * torch.cosh(theta)
    spatial = sqrt_c * torch.sinh(theta) * u / norm
    return torch.cat([x0, spatial], dim=-1)


def logmap0(y, cv: CurvatureLike = 1.0) -> torch.Tensor:
    """
    Logarithmic map at the origin; returns spatial coordinates (..., d).

    Uses asinh(|y_s| / sqrt(c)), which equals arccosh(y0 / sqrt(c)) on the
    manifold and stays accurate near the origin.
    """
    y = _as_double(y)
    sqrt_c = math.sqrt(_c(cv))
    spatial = y[..., 1:]
    norm = _safe_norm(spatial)
    return sqrt_c * torch.asinh(norm / sqrt_c) * spatial / norm


def lift_euclidean(v, cv: CurvatureLike = 1.0, max_norm: float = None) -> torch.Tensor:
    """
    Push Euclidean vectors onto the manifold through the origin's tangent space.

    Args:
        v: Shape (..., d), finite
        cv: Curvature
        max_norm: Optional tangent-norm clamp applied first

    Raises:
        ManifoldDomainError: Non-finite input
    """
    v = _as_double(v)
    if not torch.isfinite(v).all():
        raise ManifoldDomainError("lift_euclidean: non-finite input")
    if max_norm is not None:
        v = clamp_tangent_norm(v, max_norm)
    return expmap0(v, cv)


# ── General maps ──────────────────────────────────────────────────────────────

def _tangent_sq_at(x: torch.Tensor, v: torch.Tensor, c: float) -> torch.Tensor:
    """
    <v, v>_L for v tangent at x, from the spatial parts only.

    Uses (c |v_s|^2 + |x_s|^2 |v_perp|^2) / x0^2 with v_perp the part of v_s
    orthogonal to x_s. Every term is non-negative.
    """
    xs, vs, x0 = x[..., 1:], v[..., 1:], x[..., :1]
    xs_sq = (xs * xs).sum(dim=-1, keepdim=True)
    vs_sq = (vs * vs).sum(dim=-1, keepdim=True)
    dot = (xs * vs).sum(dim=-1, keepdim=True)
    perp = vs - (dot / xs_sq.clamp_min(MIN_NORM ** 2)) * xs
    perp_sq = (perp * perp).sum(dim=-1, keepdim=True)
    return (c * vs_sq + xs_sq * perp_sq) / (x0 * x0)


def exp_map(x, v, cv: CurvatureLike = 1.0) -> torch.Tensor:
    """
    Exponential map at x.

    Args:
        x: Base points (..., d+1)
        v: Tangent vectors at x (..., d+1)
        cv: Curvature

    Returns:
        cosh(|v|/sqrt(c)) x + sqrt(c) sinh(|v|/sqrt(c)) v/|v|, or x itself
        where |v| is below MIN_NORM

    Raises:
        ManifoldDomainError: v is not tangent at x
    """
    x, v = _as_double(x), _as_double(v)
    c = _c(cv)
    sqrt_c = math.sqrt(c)
    tangency = lorentz_inner(x, v).abs()
    scale = 1.0 + x.norm(dim=-1) * v.norm(dim=-1)
    if torch.any(tangency > TANGENT_TOL * scale):
        raise ManifoldDomainError("exp_map: vector is not tangent at the base point")

    sq = _tangent_sq_at(x, v, c)
    norm = sq.clamp_min(MIN_NORM ** 2).sqrt()
    theta = norm / sqrt_c
    moved = torch.cosh(theta) * x + sqrt_c * torch.sinh(theta) * v / norm
    moved = reproject(moved, c)
    return torch.where(sq < MIN_NORM ** 2, x, moved)


def log_map(x, y, cv: CurvatureLike = 1.0) -> torch.Tensor:
    """
    Logarithmic map: the tangent vector at x pointing to y.

    Projects y onto the tangent space at x with p = y + (<x, y>_L / c) x,
    resets p0 = <x_s, p_s> / x0 so p is exactly tangent, and rescales p to the
    geodesic distance. Returns zeros where |p| < MIN_NORM.
    """
    x, y = _as_double(x), _as_double(y)
    c = _c(cv)
    p = y + (lorentz_inner(x, y, keepdim=True) / c) * x
    p0 = (x[..., 1:] * p[..., 1:]).sum(dim=-1, keepdim=True) / x[..., :1]
    p = torch.cat([p0, p[..., 1:]], dim=-1)
    sq = _tangent_sq_at(x, p, c)
    dist = geodesic_distance(x, y, c).unsqueeze(-1)
    v = dist * p / sq.clamp_min(MIN_NORM ** 2).sqrt()
    return torch.where(sq < MIN_NORM ** 2, torch.zeros_like(v), v)


def _distance(inner: torch.Tensor, chord_sq: torch.Tensor, c: float) -> torch.Tensor:
    # arccosh for separated points, chord form near coincidence; both branches
    # are clamped so gradients stay finite at x == y
    sqrt_c = math.sqrt(c)
    z = -inner / c
    far = sqrt_c * torch.acosh(z.clamp_min(1.0 + NEAR_COINCIDENT))
    chord = chord_sq.clamp_min(MIN_NORM ** 2).sqrt()
    close = 2.0 * sqrt_c * torch.asinh(chord / (2.0 * sqrt_c))
    close = torch.where(chord_sq > MIN_NORM ** 2, close, torch.zeros_like(close))
    return torch.where(z < 1.0 + NEAR_COINCIDENT, close, far)


def geodesic_distance(x, y, cv: CurvatureLike = 1.0) -> torch.Tensor:
    """
    sqrt(c) * arccosh(max(1, -<x, y>_L / c)).

    Near-coincident pairs use the equal form 2 sqrt(c) asinh(|x - y|_L / (2 sqrt(c))),
    which is exactly zero for x == y with a zero gradient there.
    """
    x, y = _as_double(x), _as_double(y)
    diff = x - y
    return _distance(lorentz_inner(x, y), lorentz_inner(diff, diff), _c(cv))


def pairwise_distance(x, y, cv: CurvatureLike = 1.0) -> torch.Tensor:
    """Distances between every row of x (n, d+1) and every row of y (m, d+1)."""
    x, y = _as_double(x), _as_double(y)
    c = _c(cv)
    flipped = y.clone()
    flipped[:, 0] = -flipped[:, 0]
    inner = x @ flipped.T
    return _distance(inner, -2.0 * c - 2.0 * inner, c)


# ── Residual combination ──────────────────────────────────────────────────────

def tangent_combine(weights: Sequence[float], points: Sequence[torch.Tensor],
                    cv: CurvatureLike = 1.0) -> torch.Tensor:
    """
    Weighted combination of points in the tangent space at the origin.

    Returns expmap0(sum_k w_k * logmap0(p_k)). Weights may be floats or
    tensors broadcastable against the spatial coordinates.

    Raises:
        ShapeMismatchError: Empty or unequal inputs
    """
    if len(points) == 0 or len(weights) != len(points):
        raise ShapeMismatchError(
            f"tangent_combine: need equal non-empty lists, got {len(weights)} weights "
            f"and {len(points)} points"
        )
    total = None
    for w, p in zip(weights, points):
        if isinstance(w, float) and w == 0.0:
            continue
        term = w * logmap0(p, cv)
        total = term if total is None else total + term
    if total is None:
        total = torch.zeros_like(_as_double(points[0])[..., 1:])
    return expmap0(total, cv)
