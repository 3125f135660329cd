"""Synthetic robot/microscope harness: ground-truth rigs, tool motion,
surfaces, noise, and outliers.

Everything the real system would provide — robot kinematics, detected
pixels, semi-dense matches — is generated here with known ground truth, so
calibration, triangulation, surface fitting, and registration can be
validated end to end.  All randomness flows from the scene seed; repeated
generation is bit-identical.

Scale defaults follow the target regime: roughly 1 cm of scene extent,
full-HD 1920x1080 images, and 10 um kinematics noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .calibration import CorrespondenceSet
from .core import make_rng, numeric_config, split_seed
from .stereo import StereoRig

__all__ = [
    "SurfaceModel",
    "SimScene",
    "TruthRecord",
    "make_rig",
    "make_tool_offsets",
    "make_trajectory",
    "generate_correspondences",
    "sample_surface",
    "default_scene",
]

IMAGE_SIZE = (1920, 1080)
OUTLIER_MIN_SHIFT_PX = 50.0   # keeps injected outliers unambiguously gross


def _rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class SurfaceModel:
    """Analytic ground-truth surface: a height field z(x, y) over a patch.

    ``patch`` is (x_min, x_max, y_min, y_max) in um; ``kind`` is one of
    ``plane``, ``sphere-cap``, or ``height-field``.
    """

    kind: str
    params: dict
    patch: tuple[float, float, float, float]

    def height(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        x, y = xy[:, 0], xy[:, 1]
        p = self.params
        if self.kind == "plane":
            return p["z0"] + p["slope_x"] * x + p["slope_y"] * y
        if self.kind == "sphere-cap":
            rho2 = (x - p["center_x"]) ** 2 + (y - p["center_y"]) ** 2
            radius = p["radius"]
            if np.any(rho2 >= radius**2):
                raise ValueError("patch extends beyond the spherical cap")
            return p["apex_z"] + radius - np.sqrt(radius**2 - rho2)
        if self.kind == "height-field":
            return (p["z0"] + p["amplitude"]
                    * np.sin(2.0 * np.pi * x / p["period_x"])
                    * np.cos(2.0 * np.pi * y / p["period_y"]))
        raise ValueError(f"unknown surface kind: {self.kind!r}")

    @classmethod
    def plane(cls, z0=0.0, slope_x=0.0, slope_y=0.0,
              patch=(-1000.0, 1000.0, -1000.0, 1000.0)) -> "SurfaceModel":
        return cls("plane", {"z0": z0, "slope_x": slope_x, "slope_y": slope_y}, patch)

    @classmethod
    def sphere_cap(cls, radius=12000.0, apex_z=0.0, center_x=0.0, center_y=0.0,
                   patch=(-1000.0, 1000.0, -1000.0, 1000.0)) -> "SurfaceModel":
        return cls("sphere-cap", {"radius": radius, "apex_z": apex_z,
                                  "center_x": center_x, "center_y": center_y}, patch)

    @classmethod
    def height_field(cls, z0=0.0, amplitude=100.0, period_x=1500.0, period_y=2000.0,
                     patch=(-1000.0, 1000.0, -1000.0, 1000.0)) -> "SurfaceModel":
        return cls("height-field", {"z0": z0, "amplitude": amplitude,
                                    "period_x": period_x, "period_y": period_y}, patch)


@dataclass(frozen=True)
class TruthRecord:
    """Noiseless values behind a generated correspondence set."""

    x: np.ndarray             # (n, 3) um
    u_left: np.ndarray        # (n, 2) px
    u_right: np.ndarray       # (n, 2) px
    outlier_mask: np.ndarray  # (n,) True where pixels were replaced


@dataclass(frozen=True)
class SimScene:
    """Full synthetic scenario: rig, tool trajectory, surface, and noise."""

    rig: StereoRig
    trajectory: np.ndarray    # (n_t, n_k, 3) um
    surface: SurfaceModel
    sigma_u: float = 1.0      # px
    sigma_x: float = 10.0     # um
    outlier_fraction: float = 0.0
    seed: int = 0
    image_size: tuple[int, int] = IMAGE_SIZE

    def __post_init__(self):
        traj = np.asarray(self.trajectory, dtype=float)
        if traj.ndim != 3 or traj.shape[2] != 3:
            raise ValueError("trajectory must have shape (n_t, n_k, 3)")
        flat = traj.reshape(-1, 3)
        if np.ptp(flat[:, 2]) <= 0:
            raise ValueError("trajectory must span a depth range > 0")
        s = np.linalg.svd(flat - flat.mean(axis=0), compute_uv=False)
        if s[0] == 0.0 or s[2] <= numeric_config.coplanarity_rtol * s[0]:
            raise ValueError("trajectory points are coplanar; cover a 3D volume")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must be in [0, 1)")
        if self.sigma_u < 0 or self.sigma_x < 0:
            raise ValueError("noise levels must be non-negative")
        object.__setattr__(self, "trajectory", traj)

    @property
    def n_t(self) -> int:
        return self.trajectory.shape[0]

    @property
    def n_k(self) -> int:
        return self.trajectory.shape[1]


def make_rig(magnification_px_per_um: float, vergence_deg: float,
             roll_left_deg: float = 0.0, roll_right_deg: float = 0.0,
             image_size: tuple[int, int] = IMAGE_SIZE) -> StereoRig:
    """Two affine cameras verged symmetrically onto the origin.

    Each camera starts looking down the +z axis, is tilted by its roll
    angle about the horizontal image axis, then verged by half the vergence
    about the vertical axis (opposite signs left/right).  Translations
    center the target point (the origin) in both images.

    Raises
    ------
    DegeneratePair
        If the two viewing geometries coincide (zero vergence with equal
        rolls), leaving depth unobservable.
    """
    if not magnification_px_per_um > 0:
        raise ValueError("magnification must be positive")
    vergence = np.deg2rad(vergence_deg)
    center = np.array([image_size[0] / 2.0, image_size[1] / 2.0])

    def projection(half_vergence: float, roll_deg: float) -> np.ndarray:
        rot = _rot_y(half_vergence) @ _rot_x(np.deg2rad(roll_deg))
        k = magnification_px_per_um * np.eye(2)
        t12 = np.linalg.solve(k, center)   # target at the origin
        return k @ np.hstack([rot[:2, :], t12[:, None]])

    left = projection(+vergence / 2.0, roll_left_deg)
    right = projection(-vergence / 2.0, roll_right_deg)
    return StereoRig.from_projections(left, right)


def make_tool_offsets(n_keypoints: int) -> np.ndarray:
    """Rigid tool landmark layout: a base point plus spread tips, in um."""
    if n_keypoints < 1:
        raise ValueError("need at least one keypoint")
    offsets = [np.zeros(3)]
    m = n_keypoints - 1
    for j in range(m):
        angle = 2.0 * np.pi * j / m if m > 1 else 0.0
        offsets.append(np.array([800.0,
                                 350.0 * np.cos(angle),
                                 120.0 + 180.0 * np.sin(angle)]))
    return np.array(offsets[:n_keypoints])


def make_trajectory(n_frames: int, n_keypoints: int,
                    box: tuple[float, float, float] = (9000.0, 9000.0, 2500.0),
                    seed: int = 0) -> np.ndarray:
    """Tool-landmark positions over a low-discrepancy sweep of a box.

    The tool center follows a scrambled Halton sequence over a box of the
    given (x, y, z) spans centered at the origin, which guarantees the
    depth coverage calibration needs; the rigid landmark offsets ride
    along.  Returns shape (n_frames, n_keypoints, 3) in um.
    """
    spans = np.asarray(box, dtype=float)
    centers = (qmc.Halton(d=3, scramble=True, seed=seed).random(n_frames) - 0.5) * spans
    return centers[:, None, :] + make_tool_offsets(n_keypoints)[None, :, :]


def _project(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ m[:, :3].T + m[:, 3]


def _gross_outlier_pixels(rng: np.random.Generator, true_px: np.ndarray,
                          image_size: tuple[int, int]) -> np.ndarray:
    """Uniform pixel replacements kept far enough from the truth."""
    out = rng.uniform([0.0, 0.0], list(image_size), size=true_px.shape)
    while True:
        too_close = np.linalg.norm(out - true_px, axis=1) < OUTLIER_MIN_SHIFT_PX
        if not too_close.any():
            return out
        out[too_close] = rng.uniform([0.0, 0.0], list(image_size),
                                     size=(int(too_close.sum()), 2))


def generate_correspondences(scene: SimScene) -> tuple[CorrespondenceSet, TruthRecord]:
    """Project the tool trajectory through the rig and apply the noise model.

    Pixels get Gaussian noise of ``sigma_u``; the reported 3D landmarks get
    kinematics noise of ``sigma_x``; exactly ``floor(outlier_fraction * n)``
    correspondences have both pixels replaced with gross uniform errors.
    The truth record keeps the noiseless values and outlier labels.
    """
    rng = make_rng(split_seed(scene.seed, 2)[0])
    n_t, n_k = scene.n_t, scene.n_k
    x_true = scene.trajectory.reshape(-1, 3)
    n = len(x_true)
    ul_true = _project(scene.rig.left, x_true)
    ur_true = _project(scene.rig.right, x_true)

    ul = ul_true + rng.normal(0.0, scene.sigma_u, size=(n, 2))
    ur = ur_true + rng.normal(0.0, scene.sigma_u, size=(n, 2))
    x_meas = x_true + rng.normal(0.0, scene.sigma_x, size=(n, 3))

    outlier_mask = np.zeros(n, dtype=bool)
    n_outliers = int(np.floor(scene.outlier_fraction * n))
    if n_outliers:
        chosen = rng.choice(n, size=n_outliers, replace=False)
        outlier_mask[chosen] = True
        ul[chosen] = _gross_outlier_pixels(rng, ul_true[chosen], scene.image_size)
        ur[chosen] = _gross_outlier_pixels(rng, ur_true[chosen], scene.image_size)

    frame_index = np.repeat(np.arange(1, n_t + 1), n_k)
    keypoint_index = np.tile(np.arange(1, n_k + 1), n_t)
    correspondences = CorrespondenceSet(
        x=x_meas, u_left=ul, u_right=ur,
        frame_index=frame_index, keypoint_index=keypoint_index,
        n_t=n_t, n_k=n_k)
    truth = TruthRecord(x=x_true, u_left=ul_true, u_right=ur_true,
                        outlier_mask=outlier_mask)
    return correspondences, truth


def sample_surface(scene: SimScene, n_points: int,
                   matcher_noise_px: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Stand-in for a semi-dense matcher over the ground-truth surface.

    Samples the analytic surface uniformly over its patch, projects the 3D
    points into both cameras, and perturbs the pixels with the given
    matcher noise.

    Returns
    -------
    (matches, points) where ``matches`` is (n, 4) as (ul, vl, ur, vr) and
    ``points`` are the true 3D surface points (n, 3) in um.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = make_rng(split_seed(scene.seed, 2)[1])
    x_min, x_max, y_min, y_max = scene.surface.patch
    xy = rng.uniform([x_min, y_min], [x_max, y_max], size=(n_points, 2))
    z = scene.surface.height(xy)
    points = np.column_stack([xy, z])
    ul = _project(scene.rig.left, points)
    ur = _project(scene.rig.right, points)
    if matcher_noise_px > 0:
        ul = ul + rng.normal(0.0, matcher_noise_px, size=ul.shape)
        ur = ur + rng.normal(0.0, matcher_noise_px, size=ur.shape)
    return np.hstack([ul, ur]), points


def default_scene(seed: int = 0, n_frames: int = 100, n_keypoints: int = 3,
                  sigma_u: float = 1.0, sigma_x: float = 10.0,
                  outlier_fraction: float = 0.0) -> SimScene:
    """A representative desk-scale scene: ~1 cm extent, verged rig."""
    return SimScene(
        rig=make_rig(magnification_px_per_um=0.15, vergence_deg=10.0,
                     roll_left_deg=0.0, roll_right_deg=2.0),
        trajectory=make_trajectory(n_frames, n_keypoints, seed=seed),
        surface=SurfaceModel.sphere_cap(radius=12000.0, apex_z=-500.0,
                                        patch=(-1000.0, 1000.0, -1000.0, 1000.0)),
        sigma_u=sigma_u,
        sigma_x=sigma_x,
        outlier_fraction=outlier_fraction,
        seed=seed,
    )
