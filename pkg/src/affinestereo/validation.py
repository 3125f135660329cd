"""Input validation helpers.

Small checkers in the spirit of scikit-learn's ``check_array``: coerce to
float ndarrays, enforce shape and finiteness, and give actionable messages.
All geometry in this package is plain numpy; these helpers are the single
place where shapes and units are policed.
"""

from __future__ import annotations

import numpy as np

from .core import numeric_config
from .exceptions import RankDeficient

__all__ = [
    "check_point2",
    "check_point3",
    "check_points2",
    "check_points3",
    "check_projection",
    "check_rotation",
    "check_fundamental",
]


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_point2(u, name: str = "point") -> np.ndarray:
    """A single finite pixel coordinate (u, v)."""
    arr = _as_float_array(u, name)
    if arr.shape != (2,):
        raise ValueError(f"{name} must have shape (2,), got {arr.shape}")
    return arr


def check_point3(x, name: str = "point") -> np.ndarray:
    """A single finite 3D point in um."""
    arr = _as_float_array(x, name)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    return arr


def check_points2(u, name: str = "points", min_rows: int = 0) -> np.ndarray:
    """An (n, 2) array of finite pixel coordinates."""
    arr = np.atleast_2d(_as_float_array(u, name))
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    if arr.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {arr.shape[0]}")
    return arr


def check_points3(x, name: str = "points", min_rows: int = 0) -> np.ndarray:
    """An (n, 3) array of finite 3D points in um."""
    arr = np.atleast_2d(_as_float_array(x, name))
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    if arr.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {arr.shape[0]}")
    return arr


def check_projection(m, name: str = "projection") -> np.ndarray:
    """A 2x4 affine camera matrix whose left 2x3 block has rank 2."""
    arr = _as_float_array(m, name)
    if arr.shape != (2, 4):
        raise ValueError(f"{name} must have shape (2, 4), got {arr.shape}")
    s = np.linalg.svd(arr[:, :3], compute_uv=False)
    if s[0] == 0.0 or s[1] <= numeric_config.rank_rtol * s[0]:
        raise RankDeficient(1 if s[0] > 0 else 0, 2,
                            f"{name} has a rank-deficient 2x3 block")
    return arr


def check_rotation(r, name: str = "rotation", tol: float = 1e-9) -> np.ndarray:
    """A proper 3x3 rotation: orthonormal with determinant +1."""
    arr = _as_float_array(r, name)
    if arr.shape != (3, 3):
        raise ValueError(f"{name} must have shape (3, 3), got {arr.shape}")
    err = np.linalg.norm(arr.T @ arr - np.eye(3))
    if err > tol:
        raise ValueError(f"{name} is not orthonormal (||R'R - I|| = {err:.3e})")
    if np.linalg.det(arr) < 0:
        raise ValueError(f"{name} is a reflection (det < 0)")
    return arr


def check_fundamental(f, name: str = "fundamental") -> np.ndarray:
    """A 3x3 matrix with the affine epipolar pattern and unit norm."""
    arr = _as_float_array(f, name)
    if arr.shape != (3, 3):
        raise ValueError(f"{name} must have shape (3, 3), got {arr.shape}")
    if np.any(arr[:2, :2] != 0.0):
        raise ValueError(f"{name} must have an exactly zero upper-left 2x2 block")
    norm = np.linalg.norm(arr)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"{name} must be normalized to unit Frobenius norm")
    return arr
