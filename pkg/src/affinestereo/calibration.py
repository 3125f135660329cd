"""Affine stereo calibration from 3D-2D tool-landmark correspondences.

The stages mirror how a stereo microscope pair is calibrated against robot
kinematics: accumulate correspondences, fit each camera's 2x4 affine
projection with a (optionally RANSAC-robustified) linear DLT, decompose the
matrices into intrinsics and pose, then jointly refine both cameras, the 3D
points, and the 2D measurements with a damped Gauss-Newton bundle
adjustment under Gaussian measurement priors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import (
    make_rng,
    numeric_config,
    rotation_from_rotvec,
    rotvec_from_rotation,
    skew,
    so3_right_jacobian,
    solve_linear_least_squares,
)
from .exceptions import (
    DegenerateConfiguration,
    InvalidInit,
    NoConsensus,
    RankDeficient,
)
from .validation import check_points2, check_points3, check_projection, check_rotation

__all__ = [
    "Correspondence",
    "CorrespondenceSet",
    "AffineIntrinsics",
    "AffinePose",
    "RansacConfig",
    "BundleConfig",
    "CameraSolution",
    "StereoCalibration",
    "reproject",
    "compose_projection",
    "dlt_affine",
    "dlt_affine_ransac",
    "resect",
    "bundle_adjust",
]

MIN_SAMPLE_SIZE = 4  # affine DLT needs 4 non-coplanar points


@dataclass(frozen=True)
class Correspondence:
    """One (3D landmark, left pixel, right pixel) triple."""

    x: np.ndarray            # (3,) um, robot frame
    u_left: np.ndarray       # (2,) px
    u_right: np.ndarray      # (2,) px
    frame_index: int         # t, 1-based
    keypoint_index: int      # k, 1-based


@dataclass
class CorrespondenceSet:
    """Ordered correspondences over ``n_t`` frames and ``n_k`` keypoints."""

    x: np.ndarray            # (n, 3) um
    u_left: np.ndarray       # (n, 2) px
    u_right: np.ndarray      # (n, 2) px
    frame_index: np.ndarray  # (n,) 1-based
    keypoint_index: np.ndarray  # (n,) 1-based
    n_t: int
    n_k: int

    def __post_init__(self):
        self.x = check_points3(self.x, "x")
        self.u_left = check_points2(self.u_left, "u_left")
        self.u_right = check_points2(self.u_right, "u_right")
        self.frame_index = np.asarray(self.frame_index, dtype=int)
        self.keypoint_index = np.asarray(self.keypoint_index, dtype=int)
        n = len(self.x)
        for name in ("u_left", "u_right", "frame_index", "keypoint_index"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match x ({n})")
        if n and (self.frame_index.min() < 1 or self.keypoint_index.min() < 1):
            raise ValueError("frame and keypoint indices are 1-based")
        if n and (self.frame_index.max() > self.n_t or self.keypoint_index.max() > self.n_k):
            raise ValueError("indices exceed declared n_t / n_k")

    def __len__(self) -> int:
        return len(self.x)

    def __iter__(self) -> Iterator[Correspondence]:
        for i in range(len(self)):
            yield Correspondence(self.x[i], self.u_left[i], self.u_right[i],
                                 int(self.frame_index[i]), int(self.keypoint_index[i]))

    @property
    def is_complete(self) -> bool:
        return len(self) == self.n_t * self.n_k

    @classmethod
    def from_items(cls, items: list[Correspondence],
                   n_t: int | None = None, n_k: int | None = None) -> "CorrespondenceSet":
        if not items:
            raise ValueError("empty correspondence list")
        t = np.array([c.frame_index for c in items])
        k = np.array([c.keypoint_index for c in items])
        return cls(
            x=np.array([c.x for c in items], dtype=float),
            u_left=np.array([c.u_left for c in items], dtype=float),
            u_right=np.array([c.u_right for c in items], dtype=float),
            frame_index=t,
            keypoint_index=k,
            n_t=int(t.max()) if n_t is None else int(n_t),
            n_k=int(k.max()) if n_k is None else int(n_k),
        )


@dataclass(frozen=True)
class AffineIntrinsics:
    """Upper-triangular 2x2 intrinsics: pixel scales and skew (px per um)."""

    alpha_x: float
    alpha_y: float
    s: float = 0.0

    def __post_init__(self):
        if not (self.alpha_x > 0 and self.alpha_y > 0):
            raise ValueError("alpha_x and alpha_y must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.alpha_x, self.s], [0.0, self.alpha_y]])


@dataclass(frozen=True)
class AffinePose:
    """Camera orientation (full SO(3) rotation) and in-plane translation.

    Only the first two rotation rows and (t1, t2) are observable by an
    affine camera; the third row completes a proper rotation.
    """

    rotation: np.ndarray     # (3, 3), orthonormal, det +1
    t1: float
    t2: float

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation, "rotation"))

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.t1, self.t2])


@dataclass(frozen=True)
class RansacConfig:
    """RANSAC settings for robust affine DLT."""

    iterations: int = 500
    inlier_threshold: float = 2.0   # px, reprojection distance
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")


@dataclass(frozen=True)
class BundleConfig:
    """Bundle-adjustment noise priors and convergence settings."""

    sigma_u: float = 1.0            # px, pixel-measurement noise std
    sigma_x: float = 10.0           # um, kinematics noise std
    max_iterations: int = 200
    gradient_tolerance: float = 1e-10
    objective_tolerance: float = 1e-12

    def __post_init__(self):
        if not (self.sigma_u > 0 and self.sigma_x > 0):
            raise ValueError("sigma_u and sigma_x must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass(frozen=True)
class CameraSolution:
    """One calibrated camera: projection matrix with its decomposition."""

    projection: np.ndarray
    intrinsics: AffineIntrinsics
    pose: AffinePose


@dataclass(frozen=True)
class StereoCalibration:
    """Joint two-camera bundle-adjustment result.

    ``refined_points`` / ``refined_pixels_*`` are the adjusted landmark
    positions and measurements; the raw inputs stay available on the
    correspondence set, so downstream stages can use either.
    """

    left: CameraSolution
    right: CameraSolution
    refined_points: np.ndarray        # (n, 3) um
    refined_pixels_left: np.ndarray   # (n, 2) px
    refined_pixels_right: np.ndarray  # (n, 2) px
    final_objective: float
    initial_objective: float
    converged: bool                   # False flags DidNotConverge
    iterations: int
    gradient_norm: float


def reproject(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Affine projection u = M [x^T 1]^T, elementwise over stacked points."""
    m = np.asarray(m, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return m[:, :3] @ x + m[:, 3]
    return x @ m[:, :3].T + m[:, 3]


def compose_projection(intrinsics: AffineIntrinsics, pose: AffinePose) -> np.ndarray:
    """Rebuild M = K [r1^T t1; r2^T t2] from a resection."""
    rt = np.hstack([pose.rotation[:2, :], pose.translation[:, None]])
    return intrinsics.matrix @ rt


def _coplanarity_gap(x: np.ndarray) -> float:
    """Smallest/largest singular-value ratio of the centered 3D points."""
    centered = x - x.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0.0:
        return 0.0
    return float(s[2] / s[0])


def dlt_affine(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Affine DLT: least-squares fit of the 2x4 projection matrix.

    Solves the two independent 4-unknown rows of ``u_i = M [x_i^T 1]^T``
    over all correspondences.

    Parameters
    ----------
    x:
        (n, 3) 3D points in um, n >= 4, non-coplanar.
    u:
        (n, 2) observed pixels.

    Raises
    ------
    DegenerateConfiguration
        If the 3D points are coplanar at the configured singular-value
        ratio; the depth coverage is insufficient for calibration.
    """
    x = check_points3(x, "x", min_rows=MIN_SAMPLE_SIZE)
    u = check_points2(u, "u")
    if len(u) != len(x):
        raise ValueError("x and u must have the same length")
    if _coplanarity_gap(x) <= numeric_config.coplanarity_rtol:
        raise DegenerateConfiguration(
            f"3D points are coplanar (need {MIN_SAMPLE_SIZE} non-coplanar points)")
    a = np.hstack([x, np.ones((len(x), 1))])
    rows = solve_linear_least_squares(a, u)   # (4, 2)
    return rows.T


def dlt_affine_ransac(x: np.ndarray, u: np.ndarray,
                      cfg: RansacConfig) -> tuple[np.ndarray, np.ndarray]:
    """RANSAC-robustified affine DLT.

    Repeatedly fits minimal 4-point samples, scores by reprojection
    distance below ``cfg.inlier_threshold``, and refits on the largest
    consensus set.  Equal-sized consensus sets are resolved in favor of the
    earlier iteration, which keeps the outcome independent of any internal
    evaluation order.  Fully deterministic for a fixed seed.

    Returns
    -------
    (projection, inlier_mask)

    Raises
    ------
    NoConsensus
        Fewer than 4 points overall, or no sampled model reached a 4-point
        consensus.
    DegenerateConfiguration
        Only if every sampled minimal set was coplanar.
    """
    x = check_points3(x, "x")
    u = check_points2(u, "u")
    if len(u) != len(x):
        raise ValueError("x and u must have the same length")
    n = len(x)
    if n < MIN_SAMPLE_SIZE:
        raise NoConsensus(f"{n} points is below the minimal sample size {MIN_SAMPLE_SIZE}")

    rng = make_rng(cfg.seed)
    best_count = 0
    best_mask = None
    all_failed = True
    for _ in range(cfg.iterations):
        sample = rng.choice(n, size=MIN_SAMPLE_SIZE, replace=False)
        try:
            model = dlt_affine(x[sample], u[sample])
        except (DegenerateConfiguration, RankDeficient):
            continue
        all_failed = False
        dist = np.linalg.norm(u - reproject(model, x), axis=1)
        mask = dist < cfg.inlier_threshold
        count = int(mask.sum())
        if count > best_count:   # ties keep the earlier iteration
            best_count = count
            best_mask = mask
    if all_failed:
        raise DegenerateConfiguration("every sampled minimal set was coplanar")
    if best_count < MIN_SAMPLE_SIZE:
        raise NoConsensus(f"best consensus has {best_count} < {MIN_SAMPLE_SIZE} inliers")
    model = dlt_affine(x[best_mask], u[best_mask])
    return model, best_mask


def resect(m: np.ndarray) -> tuple[AffineIntrinsics, AffinePose]:
    """Decompose M = K [r1^T t1; r2^T t2] with K upper-triangular.

    Follows the QR route: a permuted thin QR of the transposed left 2x3
    block yields the triangular intrinsics and two orthonormal rotation
    rows; signs are flipped so both pixel scales are positive, and
    r3 = r1 x r2 completes a proper rotation.

    Raises
    ------
    RankDeficient
        If the left 2x3 block of M has rank < 2.
    """
    m = check_projection(m)   # raises RankDeficient on a rank-1 block
    p = np.array([[0.0, 1.0], [1.0, 0.0]])
    q, r = np.linalg.qr((p @ m[:, :3]).T, mode="reduced")
    k = p @ r.T @ p
    rows = p @ q.T
    signs = np.where(np.diag(k) < 0, -1.0, 1.0)
    k = k * signs[None, :]
    rows = rows * signs[:, None]
    r3 = np.cross(rows[0], rows[1])
    rotation = np.vstack([rows, r3])
    t = np.linalg.solve(k, m[:, 3])
    intrinsics = AffineIntrinsics(alpha_x=float(k[0, 0]), alpha_y=float(k[1, 1]),
                                  s=float(k[0, 1]))
    pose = AffinePose(rotation=rotation, t1=float(t[0]), t2=float(t[1]))
    return intrinsics, pose


# ---------------------------------------------------------------------------
# Bundle adjustment
#
# Each camera is parametrized by 7 numbers: (alpha_x, alpha_y, axis-angle
# rotation, t1, t2), with skew clamped to zero, so the affine-camera
# constraint set is eliminated by construction.  The remaining unknowns are
# the refined 3D points and refined 2D pixels.  The normal equations have an
# arrowhead structure (14 camera parameters coupled to independent 7-dim
# per-correspondence blocks), solved by Schur complement inside a damped
# Gauss-Newton (Levenberg-Marquardt) loop with analytic Jacobians.
# ---------------------------------------------------------------------------


def _params_from_projection(m: np.ndarray) -> np.ndarray:
    """(alpha_x, alpha_y, rotvec, t1, t2) from a projection, dropping skew."""
    try:
        intrinsics, pose = resect(m)
    except RankDeficient as exc:
        raise InvalidInit(f"initial projection is not resectable: {exc}") from exc
    return np.concatenate([
        [intrinsics.alpha_x, intrinsics.alpha_y],
        rotvec_from_rotation(pose.rotation),
        [pose.t1, pose.t2],
    ])


def _projection_from_params(theta: np.ndarray) -> np.ndarray:
    ax, ay = theta[0], theta[1]
    rot = rotation_from_rotvec(theta[2:5])
    k = np.array([[ax, 0.0], [0.0, ay]])
    return k @ np.hstack([rot[:2, :], theta[5:7][:, None]])


def _project_with_jacobian(theta: np.ndarray,
                           points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predicted pixels and their (n, 2, 7) Jacobian in the camera params."""
    ax, ay = theta[0], theta[1]
    w = theta[2:5]
    t = theta[5:7]
    rot = rotation_from_rotvec(w)
    p = points @ rot[:2, :].T + t                   # (n, 2)
    u = p * np.array([ax, ay])

    jac = np.zeros((len(points), 2, 7))
    jac[:, 0, 0] = p[:, 0]
    jac[:, 1, 1] = p[:, 1]
    # d(R(w) x)/dw = -R skew(x) J_r, rows 1..2 scaled by the pixel scales
    drx = -np.einsum("ab,nbc,cd->nad", rot, skew(points), so3_right_jacobian(w))
    jac[:, 0, 2:5] = ax * drx[:, 0, :]
    jac[:, 1, 2:5] = ay * drx[:, 1, :]
    jac[:, 0, 5] = ax
    jac[:, 1, 6] = ay
    return u, jac


class _BundleProblem:
    """State and normal-equation assembly for the two-camera adjustment."""

    def __init__(self, c: CorrespondenceSet, cfg: BundleConfig):
        self.x_meas = c.x
        self.ul_meas = c.u_left
        self.ur_meas = c.u_right
        self.wu = 1.0 / cfg.sigma_u
        self.wx = 1.0 / cfg.sigma_x

    def objective(self, state) -> float:
        theta_l, theta_r, pts, ul, ur = state
        e_pi = 0.5 * (
            np.sum((ul - reproject(_projection_from_params(theta_l), pts)) ** 2)
            + np.sum((ur - reproject(_projection_from_params(theta_r), pts)) ** 2))
        e_theta = 0.5 * (np.sum((ul - self.ul_meas) ** 2)
                         + np.sum((ur - self.ur_meas) ** 2))
        e_phi = 0.5 * np.sum((pts - self.x_meas) ** 2)
        return e_pi + self.wu * e_theta + self.wx * e_phi

    def normal_equations(self, state):
        """Return (U, V, W, g_u, g_v, grad_inf) for the current state.

        U is the 14x14 camera block, V the (state-independent across i)
        7x7 per-correspondence block, W the (n, 14, 7) coupling blocks,
        g_u / g_v the gradient pieces, grad_inf the full gradient inf-norm.
        """
        theta_l, theta_r, pts, ul, ur = state
        ml = _projection_from_params(theta_l)
        mr = _projection_from_params(theta_r)
        ul_pred, jl = _project_with_jacobian(theta_l, pts)
        ur_pred, jr = _project_with_jacobian(theta_r, pts)
        rl = ul - ul_pred                 # (n, 2)
        rr = ur - ur_pred
        ml3, mr3 = ml[:, :3], mr[:, :3]
        n = len(pts)

        u_block = np.zeros((14, 14))
        u_block[:7, :7] = np.einsum("nia,nib->ab", jl, jl)
        u_block[7:, 7:] = np.einsum("nia,nib->ab", jr, jr)
        g_u = np.concatenate([
            -np.einsum("nia,ni->a", jl, rl),
            -np.einsum("nia,ni->a", jr, rr),
        ])

        v_block = np.zeros((7, 7))
        v_block[:3, :3] = ml3.T @ ml3 + mr3.T @ mr3 + self.wx * np.eye(3)
        v_block[:3, 3:5] = -ml3.T
        v_block[3:5, :3] = -ml3
        v_block[:3, 5:7] = -mr3.T
        v_block[5:7, :3] = -mr3
        v_block[3:5, 3:5] = (1.0 + self.wu) * np.eye(2)
        v_block[5:7, 5:7] = (1.0 + self.wu) * np.eye(2)

        w_blocks = np.zeros((n, 14, 7))
        w_blocks[:, :7, 0:3] = np.einsum("nia,ib->nab", jl, ml3)
        w_blocks[:, :7, 3:5] = -np.transpose(jl, (0, 2, 1))
        w_blocks[:, 7:, 0:3] = np.einsum("nia,ib->nab", jr, mr3)
        w_blocks[:, 7:, 5:7] = -np.transpose(jr, (0, 2, 1))

        g_v = np.zeros((n, 7))
        g_v[:, 0:3] = -rl @ ml3 - rr @ mr3 + self.wx * (pts - self.x_meas)
        g_v[:, 3:5] = rl + self.wu * (ul - self.ul_meas)
        g_v[:, 5:7] = rr + self.wu * (ur - self.ur_meas)

        grad_inf = max(np.abs(g_u).max(initial=0.0), np.abs(g_v).max(initial=0.0))
        return u_block, v_block, w_blocks, g_u, g_v, grad_inf


def _solve_damped(u_block, v_block, w_blocks, g_u, g_v, lam):
    """One Levenberg-Marquardt step via the Schur complement."""
    def damp(h):
        d = np.diag(h).copy()
        floor = 1e-12 * max(d.max(initial=0.0), 1.0)
        d = np.maximum(d, floor)
        return h + lam * np.diag(d)

    u_d = damp(u_block)
    v_d = damp(v_block)
    v_inv = np.linalg.inv(v_d)
    s = u_d - np.einsum("nab,bc,ndc->ad", w_blocks, v_inv, w_blocks)
    rhs = -g_u + np.einsum("nab,bc,nc->a", w_blocks, v_inv, g_v)
    delta_cam = np.linalg.solve(s, rhs)
    delta_v = -(g_v + np.einsum("nab,a->nb", w_blocks, delta_cam)) @ v_inv.T
    return delta_cam, delta_v


def bundle_adjust(c: CorrespondenceSet, init_left: np.ndarray,
                  init_right: np.ndarray,
                  cfg: BundleConfig | None = None) -> StereoCalibration:
    """Joint bundle adjustment of both cameras, 3D points, and 2D pixels.

    Minimizes the reprojection energy plus Gaussian measurement priors
    weighted by ``1/sigma_u`` (pixels) and ``1/sigma_x`` (kinematics), over
    the zero-skew camera parametrization, the refined points, and the
    refined pixels.  The objective is non-increasing across accepted
    iterations, and the result is returned even without convergence, with
    ``converged=False`` flagging the outcome.

    Note the cameras are reported in the zero-skew parametrization: with
    ``max_iterations=0`` the returned matrices are the inputs re-composed
    with their skew clamped to zero.

    Raises
    ------
    InvalidInit
        If an initial projection cannot be resected.
    DegenerateConfiguration
        If the (measured) 3D points are coplanar or fewer than 4.
    """
    cfg = BundleConfig() if cfg is None else cfg
    init_left = check_projection(np.asarray(init_left, dtype=float), "init_left")
    init_right = check_projection(np.asarray(init_right, dtype=float), "init_right")
    if len(c) < MIN_SAMPLE_SIZE or _coplanarity_gap(c.x) <= numeric_config.coplanarity_rtol:
        raise DegenerateConfiguration("need >= 4 non-coplanar correspondences")

    problem = _BundleProblem(c, cfg)
    state = [
        _params_from_projection(init_left),
        _params_from_projection(init_right),
        c.x.copy(),
        c.u_left.copy(),
        c.u_right.copy(),
    ]
    objective = problem.objective(state)
    initial_objective = objective

    lam = 1e-6
    iterations = 0
    converged = False
    grad_inf = np.inf
    while True:
        u_block, v_block, w_blocks, g_u, g_v, grad_inf = problem.normal_equations(state)
        if grad_inf <= cfg.gradient_tolerance:
            converged = True
            break
        if iterations >= cfg.max_iterations:
            break

        accepted = False
        while lam <= 1e16:
            try:
                delta_cam, delta_v = _solve_damped(
                    u_block, v_block, w_blocks, g_u, g_v, lam)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = [
                state[0] + delta_cam[:7],
                state[1] + delta_cam[7:],
                state[2] + delta_v[:, 0:3],
                state[3] + delta_v[:, 3:5],
                state[4] + delta_v[:, 5:7],
            ]
            trial_objective = problem.objective(trial)
            if trial_objective < objective:
                accepted = True
                lam = max(lam / 3.0, 1e-12)
                break
            lam *= 10.0
        if not accepted:
            break
        iterations += 1
        decrease = objective - trial_objective
        state, objective = trial, trial_objective
        if decrease <= cfg.objective_tolerance * max(objective, np.finfo(float).tiny):
            converged = True
            break

    theta_l, theta_r, pts, ul, ur = state

    def solution(theta: np.ndarray) -> CameraSolution:
        rotation = rotation_from_rotvec(theta[2:5])
        intrinsics = AffineIntrinsics(alpha_x=float(theta[0]), alpha_y=float(theta[1]),
                                      s=0.0)
        pose = AffinePose(rotation=rotation, t1=float(theta[5]), t2=float(theta[6]))
        return CameraSolution(projection=compose_projection(intrinsics, pose),
                              intrinsics=intrinsics, pose=pose)

    return StereoCalibration(
        left=solution(theta_l),
        right=solution(theta_r),
        refined_points=pts,
        refined_pixels_left=ul,
        refined_pixels_right=ur,
        final_objective=float(objective),
        initial_objective=float(initial_objective),
        converged=converged,
        iterations=iterations,
        gradient_norm=float(grad_inf),
    )
