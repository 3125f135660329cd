"""Shared numerical backbone: units, numeric tolerances, RNG, linear algebra.

Conventions used across the package:

* lengths are micrometres (um) in the robot reference frame,
* pixel coordinates are continuous (sub-pixel allowed), u = column, v = row,
* angles are radians,
* all random draws flow from explicit 64-bit seeds (no OS entropy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import RankDeficient

__all__ = [
    "NumericConfig",
    "numeric_config",
    "make_rng",
    "split_seed",
    "effective_rank",
    "solve_linear_least_squares",
    "skew",
    "rotation_from_rotvec",
    "rotvec_from_rotation",
    "so3_right_jacobian",
]


@dataclass
class NumericConfig:
    """Global numeric tolerances; a single mutable record shared package-wide."""

    rank_rtol: float = 1e-10          # effective-rank cutoff, relative to ||A||
    coplanarity_rtol: float = 1e-8    # singular-value ratio for coplanar 3D sets
    collinearity_rtol: float = 1e-8   # singular-value ratio for collinear sets
    pair_rtol: float = 1e-8           # nullspace test for degenerate camera pairs


numeric_config = NumericConfig()


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator from a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng(seed)


def split_seed(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent child seeds from one master seed.

    Uses numpy's SeedSequence spawning, so the derivation is stable across
    runs and platforms.
    """
    children = np.random.SeedSequence(int(seed)).spawn(int(n))
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def effective_rank(a: np.ndarray, rtol: float | None = None) -> int:
    """Number of singular values above ``rtol * smax``."""
    rtol = numeric_config.rank_rtol if rtol is None else rtol
    s = np.linalg.svd(np.asarray(a, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def solve_linear_least_squares(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimize ||Ax - b||_2 with a rank-revealing (SVD) decomposition.

    Parameters
    ----------
    a:
        Matrix of shape (m, n) with m >= n, all entries finite.
    b:
        Right-hand side of shape (m,) or (m, k).

    Returns
    -------
    The least-squares solution of shape (n,) or (n, k).

    Raises
    ------
    RankDeficient
        If the effective rank at the configured relative tolerance is
        below n; this signals degenerate geometry upstream.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2:
        raise ValueError("A must be a 2-D matrix")
    m, n = a.shape
    if m < n:
        raise ValueError(f"system is underdetermined: {m} rows < {n} unknowns")
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
        raise ValueError("A and b must be finite")
    x, _, rank, _ = np.linalg.lstsq(a, b, rcond=numeric_config.rank_rtol)
    if rank < n:
        raise RankDeficient(rank, n)
    return x


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w).

    Accepts a single 3-vector or a stack of shape (..., 3).
    """
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def rotation_from_rotvec(rotvec: np.ndarray) -> np.ndarray:
    """Exponential map: axis-angle 3-vector to a 3x3 rotation matrix."""
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix()


def rotvec_from_rotation(matrix: np.ndarray) -> np.ndarray:
    """Logarithm map: 3x3 rotation matrix to its axis-angle 3-vector."""
    return Rotation.from_matrix(np.asarray(matrix, dtype=float)).as_rotvec()


def so3_right_jacobian(rotvec: np.ndarray) -> np.ndarray:
    """Right Jacobian J_r of SO(3) at the given axis-angle vector.

    Satisfies d(R(w) v)/dw = -R(w) skew(v) J_r(w), which the bundle
    adjustment uses for its analytic camera Jacobians.  Small angles use
    the series expansion to stay smooth through w = 0.
    """
    w = np.asarray(rotvec, dtype=float)
    theta2 = float(w @ w)
    wx = skew(w)
    if theta2 < 1e-14:
        return np.eye(3) - 0.5 * wx + (wx @ wx) / 6.0
    theta = np.sqrt(theta2)
    c1 = (1.0 - np.cos(theta)) / theta2
    c2 = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) - c1 * wx + c2 * (wx @ wx)
