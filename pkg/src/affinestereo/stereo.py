"""Affine epipolar geometry, match filtering, and triangulation.

For an affine camera pair the fundamental matrix has the fixed sparsity
pattern ``[[0, 0, a], [0, 0, b], [c, d, e]]``; a correspondence satisfies
``a*ur + b*vr + c*ul + d*vl + e = 0``.  The five parameters are fitted from
synthetic correspondences generated by projecting a fixed 3D point set
through both cameras, which is exact for consistent cameras and avoids
closed-form minor bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import numeric_config, solve_linear_least_squares
from .exceptions import DegeneratePair
from .validation import check_fundamental, check_point2, check_projection

__all__ = [
    "StereoRig",
    "fundamental_from_cameras",
    "epipolar_distances",
    "filter_epipolar",
    "triangulate",
    "triangulate_set",
]

# unit-cube corners plus face offsets: 14 points spanning 3D in general
# position, used to synthesize correspondences for the fundamental fit
_PROBE_POINTS = np.array(
    [[sx, sy, sz] for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)]
    + [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5],
       [-0.3, 0.7, 0.2], [0.6, -0.2, -0.8], [0.1, 0.3, 0.9]]
)


@dataclass(frozen=True)
class StereoRig:
    """A calibrated affine camera pair with its fundamental matrix."""

    left: np.ndarray         # (2, 4)
    right: np.ndarray        # (2, 4)
    fundamental: np.ndarray  # (3, 3), affine pattern, unit norm

    def __post_init__(self):
        object.__setattr__(self, "left", check_projection(self.left, "left"))
        object.__setattr__(self, "right", check_projection(self.right, "right"))
        object.__setattr__(self, "fundamental",
                           check_fundamental(self.fundamental, "fundamental"))

    @classmethod
    def from_projections(cls, left: np.ndarray, right: np.ndarray) -> "StereoRig":
        return cls(left=left, right=right,
                   fundamental=fundamental_from_cameras(left, right))


def _project(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ m[:, :3].T + m[:, 3]


def fundamental_from_cameras(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Affine fundamental matrix consistent with two projection matrices.

    Fits the five free parameters by a homogeneous least-squares problem on
    correspondences synthesized from a fixed 3D probe set, with the pixel
    coordinates centered and scaled first for conditioning.  The result has
    a bit-exact zero upper-left 2x2 block and unit Frobenius norm, with the
    sign fixed so the largest-magnitude entry is positive.

    Raises
    ------
    DegeneratePair
        If the constraint nullspace is not one-dimensional (e.g. the two
        cameras coincide up to a 2D affine transform of the image) or the
        fitted matrix does not have rank 2.
    """
    left = check_projection(left, "left")
    right = check_projection(right, "right")
    ul = _project(left, _PROBE_POINTS)
    ur = _project(right, _PROBE_POINTS)

    # center and scale each image's pixels (affine normalization keeps the
    # zero pattern of F)
    cl, cr = ul.mean(axis=0), ur.mean(axis=0)
    sl = np.sqrt(2.0) / max(np.sqrt(np.mean(np.sum((ul - cl) ** 2, axis=1))), 1e-300)
    sr = np.sqrt(2.0) / max(np.sqrt(np.mean(np.sum((ur - cr) ** 2, axis=1))), 1e-300)
    uln = (ul - cl) * sl
    urn = (ur - cr) * sr

    design = np.column_stack([urn[:, 0], urn[:, 1], uln[:, 0], uln[:, 1],
                              np.ones(len(uln))])
    _, sv, vt = np.linalg.svd(design, full_matrices=False)
    if sv[0] == 0.0 or sv[-2] <= numeric_config.pair_rtol * sv[0]:
        raise DegeneratePair("epipolar constraint is not uniquely determined")
    a, b, c, d, e = vt[-1]

    # undo the normalization: params transform like the line coefficients
    a, b = a * sr, b * sr
    c, d = c * sl, d * sl
    e = e - (a * cr[0] + b * cr[1]) - (c * cl[0] + d * cl[1])

    params = np.array([a, b, c, d, e])
    params = params / np.linalg.norm(params)
    a, b, c, d, e = params
    if np.hypot(a, b) <= numeric_config.pair_rtol or np.hypot(c, d) <= numeric_config.pair_rtol:
        raise DegeneratePair("fitted epipolar matrix is rank deficient")
    lead = np.argmax(np.abs(params))
    if params[lead] < 0:
        params = -params
    a, b, c, d, e = params
    return np.array([[0.0, 0.0, a], [0.0, 0.0, b], [c, d, e]])


def epipolar_distances(matches_left: np.ndarray, matches_right: np.ndarray,
                       f: np.ndarray) -> np.ndarray:
    """Symmetric epipolar distance of each match, in pixels.

    Mean of the point-to-epipolar-line distances measured in both images,
    which avoids favoring either camera.
    """
    f = check_fundamental(f)
    ul = np.atleast_2d(np.asarray(matches_left, dtype=float))
    ur = np.atleast_2d(np.asarray(matches_right, dtype=float))
    if len(ul) == 0:
        return np.zeros(0)
    residual = (f[2, 0] * ul[:, 0] + f[2, 1] * ul[:, 1]
                + f[0, 2] * ur[:, 0] + f[1, 2] * ur[:, 1] + f[2, 2])
    norm_right = np.hypot(f[0, 2], f[1, 2])   # line in the right image
    norm_left = np.hypot(f[2, 0], f[2, 1])    # line in the left image
    return 0.5 * np.abs(residual) * (1.0 / norm_right + 1.0 / norm_left)


def filter_epipolar(matches_left: np.ndarray, matches_right: np.ndarray,
                    f: np.ndarray, threshold_px: float = 2.0) -> np.ndarray:
    """Inlier mask of matches within ``threshold_px`` symmetric distance."""
    if not threshold_px > 0:
        raise ValueError("threshold_px must be positive")
    return epipolar_distances(matches_left, matches_right, f) <= threshold_px


def triangulate(rig: StereoRig, u_left: np.ndarray, u_right: np.ndarray) -> np.ndarray:
    """Least-squares 3D point from one stereo correspondence.

    Solves the stacked four-equation system ``[M_l; M_r] [x^T 1]^T =
    [u_l; u_r]`` for x, in um at the calibrated scale.

    Raises
    ------
    RankDeficient
        If the stacked 4x3 system has rank < 3 (no depth information,
        e.g. for identical cameras).
    """
    u_left = check_point2(u_left, "u_left")
    u_right = check_point2(u_right, "u_right")
    a = np.vstack([rig.left[:, :3], rig.right[:, :3]])
    b = np.concatenate([u_left - rig.left[:, 3], u_right - rig.right[:, 3]])
    return solve_linear_least_squares(a, b)


def triangulate_set(rig: StereoRig,
                    matches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate a batch of matches ``(ul, vl, ur, vr)`` row by row.

    Solves the same least-squares system as :func:`triangulate` with the
    rig's stacked matrix factored once.  Rows that cannot be triangulated
    (non-finite pixels, or a rank-deficient rig, which fails every row) are
    omitted from the cloud and reported through the kept mask; output order
    follows input order.

    Returns
    -------
    (points, kept_mask) with ``points`` of shape (m, 3) and ``kept_mask``
    of shape (n,); ``n - m`` rows failed.
    """
    matches = np.atleast_2d(np.asarray(matches, dtype=float))
    if matches.size == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=bool)
    if matches.shape[1] != 4:
        raise ValueError(f"matches must have shape (n, 4), got {matches.shape}")
    n = len(matches)
    kept = np.all(np.isfinite(matches), axis=1)

    a = np.vstack([rig.left[:, :3], rig.right[:, :3]])
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] <= numeric_config.rank_rtol * sv[0]:
        return np.zeros((0, 3)), np.zeros(n, dtype=bool)

    offset = np.concatenate([rig.left[:, 3], rig.right[:, 3]])
    b = matches[kept] - offset
    points = np.linalg.lstsq(a, b.T, rcond=numeric_config.rank_rtol)[0].T
    return points, kept
