"""Rigid alignment of triangulated landmarks to robot-kinematics landmarks.

The camera-to-robot transform is recovered from paired 3D point sets by
the closed-form orthogonal-Procrustes solution (centroid subtraction and
SVD of the cross-covariance with determinant correction).  An optional
IRLS refinement minimizes the literal sum of unsquared residual norms for
robustness to stray pairs.  Pose accuracy improves by accumulating pairs
over a window of frames while the camera is static.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import numeric_config
from .exceptions import CollinearPoints, CountMismatch
from .validation import check_points3, check_rotation

__all__ = [
    "RigidTransform",
    "ResidualStats",
    "register",
    "register_accumulated",
]


@dataclass(frozen=True)
class RigidTransform:
    """x_robot = rotation @ x_camera + translation (um)."""

    rotation: np.ndarray     # (3, 3) in SO(3)
    translation: np.ndarray  # (3,) um

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.rotation @ x + self.translation
        return x @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self o other)(x) = self(other(x))."""
        return RigidTransform(rotation=self.rotation @ other.rotation,
                              translation=self.rotation @ other.translation
                              + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rotation=rt, translation=-rt @ self.translation)


@dataclass(frozen=True)
class ResidualStats:
    """Per-pair alignment residuals of a registration."""

    per_point: np.ndarray  # (n,) um
    rmse: float
    max: float

    @classmethod
    def from_residuals(cls, residuals: np.ndarray) -> "ResidualStats":
        norms = np.linalg.norm(np.atleast_2d(residuals), axis=1)
        return cls(per_point=norms,
                   rmse=float(np.sqrt(np.mean(norms**2))),
                   max=float(norms.max()))


def _check_not_collinear(points: np.ndarray, name: str) -> None:
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0.0 or s[1] <= numeric_config.collinearity_rtol * s[0]:
        raise CollinearPoints(f"{name} points are collinear; rotation about "
                              "their axis is unrecoverable")


def _procrustes(reconstructed: np.ndarray, measured: np.ndarray,
                weights: np.ndarray | None = None) -> RigidTransform:
    """Weighted least-squares rigid fit with determinant correction."""
    if weights is None:
        weights = np.ones(len(reconstructed))
    w = weights / weights.sum()
    centroid_a = w @ reconstructed
    centroid_b = w @ measured
    da = reconstructed - centroid_a
    db = measured - centroid_b
    h = (w[:, None] * da).T @ db
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    translation = centroid_b - rotation @ centroid_a
    return RigidTransform(rotation=rotation, translation=translation)


def register(reconstructed: np.ndarray, measured: np.ndarray,
             robust: bool = False,
             irls_iterations: int = 30) -> tuple[RigidTransform, ResidualStats]:
    """Rigid transform taking reconstructed points onto measured points.

    Solves the squared-error problem in closed form (the linear solution
    the three-point minimum admits).  With ``robust=True`` the closed-form
    estimate seeds an IRLS refinement of the sum of unsquared residual
    norms, which down-weights stray pairs.

    Parameters
    ----------
    reconstructed:
        (n, 3) triangulated landmark positions, n >= 3, not all collinear.
    measured:
        (n, 3) matching robot-kinematics positions.

    Raises
    ------
    CountMismatch
        If the two lists differ in length.
    CollinearPoints
        If either point set is collinear (includes n < 3).
    """
    reconstructed = check_points3(reconstructed, "reconstructed", min_rows=1)
    measured = check_points3(measured, "measured", min_rows=1)
    if len(reconstructed) != len(measured):
        raise CountMismatch(
            f"{len(reconstructed)} reconstructed vs {len(measured)} measured points")
    if len(reconstructed) < 3:
        raise CollinearPoints("registration needs at least 3 non-collinear pairs")
    _check_not_collinear(reconstructed, "reconstructed")
    _check_not_collinear(measured, "measured")

    transform = _procrustes(reconstructed, measured)
    if robust:
        for _ in range(irls_iterations):
            norms = np.linalg.norm(transform.apply(reconstructed) - measured, axis=1)
            weights = 1.0 / np.maximum(norms, 1e-9)
            transform = _procrustes(reconstructed, measured, weights)
    residuals = transform.apply(reconstructed) - measured
    return transform, ResidualStats.from_residuals(residuals)


def register_accumulated(
    frames: list[tuple[np.ndarray, np.ndarray]],
    window: int,
    robust: bool = False,
) -> tuple[RigidTransform, np.ndarray]:
    """Registration from correspondences accumulated over recent frames.

    Concatenates the last ``window`` frames' (reconstructed, measured)
    pairs — clamped to the number of frames available — and registers
    them jointly.  The returned error curve reports, for each window size
    w = 1..window, the residual RMSE of the w-frame transform evaluated
    over all provided frames; a transform fitted on too few frames
    generalizes poorly, so the curve exposes how many frames the pose
    estimate needs to stabilize.

    Returns
    -------
    (transform, error_curve) where ``transform`` uses the full window and
    ``error_curve[w - 1]`` is the all-frames RMSE of the w-frame fit.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if not frames:
        raise ValueError("frames must be non-empty")
    window = min(window, len(frames))

    all_reconstructed = np.vstack([f[0] for f in frames])
    all_measured = np.vstack([f[1] for f in frames])
    if len(all_reconstructed) != len(all_measured):
        raise CountMismatch("frames carry mismatched point counts")

    error_curve = np.zeros(window)
    transform = RigidTransform.identity()
    for w in range(1, window + 1):
        recon = np.vstack([f[0] for f in frames[-w:]])
        meas = np.vstack([f[1] for f in frames[-w:]])
        transform, _ = register(recon, meas, robust=robust)
        residuals = transform.apply(all_reconstructed) - all_measured
        error_curve[w - 1] = float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))
    return transform, error_curve
