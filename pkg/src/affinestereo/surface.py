"""Robust bicubic B-spline surface fitting over an image-plane domain.

The reconstructed anatomy is represented as a tensor-product bicubic
B-spline mapping left-image pixels to 3D points (one scalar channel per
coordinate).  Fitting minimizes an L1 data term plus a thin-plate bending
regularizer; the L1 norm is handled by iteratively reweighted least
squares on the smooth surrogate ``sqrt(r^2 + delta^2)``, so every step is
a weighted linear solve.  Points whose L1 residual exceeds a threshold are
rejected once and the surface re-estimated on the survivors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .core import numeric_config
from .exceptions import DegenerateDomain, EmptyAfterRejection, OutOfDomain
from .validation import check_point2, check_points2, check_points3

__all__ = [
    "BBSurface",
    "SplineFitConfig",
    "fit_surface",
    "evaluate_surface",
    "evaluate_grid",
    "bending_energy",
]

DEGREE = 3


@dataclass(frozen=True)
class SplineFitConfig:
    """Surface-fit hyperparameters."""

    mu: float = 1e-2                 # bending-regularizer weight
    epsilon: float = 30.0            # um, L1 rejection threshold
    grid: tuple[int, int] = (16, 16)  # control points along u and v
    irls_iterations: int = 10
    irls_delta: float = 1e-3         # um, L1 smoothing constant

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if min(self.grid) < 4:
            raise ValueError("cubic surfaces need at least 4 control points per axis")
        if self.irls_iterations < 1:
            raise ValueError("irls_iterations must be >= 1")
        if not self.irls_delta > 0:
            raise ValueError("irls_delta must be positive")


@dataclass(frozen=True)
class BBSurface:
    """Bicubic B-spline surface Psi: (u, v) pixels -> (x, y, z) um."""

    knots_u: np.ndarray       # clamped uniform cubic knot vector
    knots_v: np.ndarray
    coefficients: np.ndarray  # (g_u, g_v, 3)

    def __post_init__(self):
        ku = np.asarray(self.knots_u, dtype=float)
        kv = np.asarray(self.knots_v, dtype=float)
        coeff = np.asarray(self.coefficients, dtype=float)
        if coeff.ndim != 3 or coeff.shape[2] != 3:
            raise ValueError("coefficients must have shape (g_u, g_v, 3)")
        g_u, g_v = coeff.shape[:2]
        if g_u < 4 or g_v < 4:
            raise ValueError("cubic surfaces need at least 4 control points per axis")
        if len(ku) != g_u + DEGREE + 1 or len(kv) != g_v + DEGREE + 1:
            raise ValueError("knot vector lengths do not match the control grid")
        object.__setattr__(self, "knots_u", ku)
        object.__setattr__(self, "knots_v", kv)
        object.__setattr__(self, "coefficients", coeff)

    @property
    def grid(self) -> tuple[int, int]:
        return self.coefficients.shape[0], self.coefficients.shape[1]

    @property
    def domain(self) -> tuple[float, float, float, float]:
        """(u_min, u_max, v_min, v_max) of the parameter rectangle."""
        return (float(self.knots_u[DEGREE]), float(self.knots_u[-DEGREE - 1]),
                float(self.knots_v[DEGREE]), float(self.knots_v[-DEGREE - 1]))


def _clamped_knots(lo: float, hi: float, g: int) -> np.ndarray:
    interior = np.linspace(lo, hi, g - 2)[1:-1]
    return np.concatenate([np.full(DEGREE + 1, lo), interior, np.full(DEGREE + 1, hi)])


def _basis_matrix(knots: np.ndarray, x: np.ndarray, nu: int = 0) -> np.ndarray:
    """Dense (len(x), g) matrix of basis-function ``nu``-th derivatives."""
    g = len(knots) - DEGREE - 1
    spline = BSpline(knots, np.eye(g), DEGREE, extrapolate=False)
    if nu:
        spline = spline.derivative(nu)
    return np.nan_to_num(spline(np.asarray(x, dtype=float)))


def _gram_matrix(knots: np.ndarray, nu: int) -> np.ndarray:
    """Exact Gram matrix of ``nu``-th basis derivatives over the domain.

    The integrands are piecewise polynomials of degree at most 6, so a
    4-point Gauss-Legendre rule per knot span integrates them exactly.
    """
    g = len(knots) - DEGREE - 1
    nodes, weights = np.polynomial.legendre.leggauss(4)
    spans = [(knots[i], knots[i + 1]) for i in range(DEGREE, g)
             if knots[i + 1] > knots[i]]
    xs, ws = [], []
    for lo, hi in spans:
        half = 0.5 * (hi - lo)
        xs.append(half * nodes + 0.5 * (hi + lo))
        ws.append(half * weights)
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    d = _basis_matrix(knots, x, nu)
    return d.T @ (w[:, None] * d)


def _bending_matrix(surface_or_knots) -> np.ndarray:
    """Thin-plate quadratic form: kron-assembled from 1D Gram matrices."""
    ku, kv = surface_or_knots
    g0u, g1u, g2u = (_gram_matrix(ku, nu) for nu in (0, 1, 2))
    g0v, g1v, g2v = (_gram_matrix(kv, nu) for nu in (0, 1, 2))
    return (np.kron(g2u, g0v) + 2.0 * np.kron(g1u, g1v) + np.kron(g0u, g2v))


def evaluate_surface(surface: BBSurface, u: np.ndarray) -> np.ndarray:
    """Evaluate the surface at one pixel location inside its domain.

    Raises
    ------
    OutOfDomain
        If ``u`` lies outside the parameter rectangle.
    """
    u = check_point2(u, "u")
    u_min, u_max, v_min, v_max = surface.domain
    if not (u_min <= u[0] <= u_max and v_min <= u[1] <= v_max):
        raise OutOfDomain(
            f"point ({u[0]}, {u[1]}) outside domain "
            f"[{u_min}, {u_max}] x [{v_min}, {v_max}]")
    bu = _basis_matrix(surface.knots_u, u[:1])[0]
    bv = _basis_matrix(surface.knots_v, u[1:])[0]
    return np.einsum("a,b,abc->c", bu, bv, surface.coefficients)


def evaluate_grid(surface: BBSurface, us: np.ndarray, vs: np.ndarray,
                  du: int = 0, dv: int = 0) -> np.ndarray:
    """Evaluate (a derivative of) the surface on a parameter grid.

    Returns an array of shape (len(us), len(vs), 3).  Grid points must lie
    inside the domain.
    """
    u_min, u_max, v_min, v_max = surface.domain
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    if us.min() < u_min or us.max() > u_max or vs.min() < v_min or vs.max() > v_max:
        raise OutOfDomain("grid extends outside the surface domain")
    bu = _basis_matrix(surface.knots_u, us, du)
    bv = _basis_matrix(surface.knots_v, vs, dv)
    return np.einsum("ia,jb,abc->ijc", bu, bv, surface.coefficients)


def bending_energy(surface: BBSurface) -> float:
    """Thin-plate bending energy, integrated in closed form.

    Computes the integral over the domain of ``|Psi_uu|^2 + 2 |Psi_uv|^2 +
    |Psi_vv|^2`` as a quadratic form in the coefficients, assembled from
    exact basis-derivative inner products.
    """
    b = _bending_matrix((surface.knots_u, surface.knots_v))
    c = surface.coefficients.reshape(-1, 3)
    return float(np.einsum("ic,ij,jc->", c, b, c))


def _design_matrix(knots_u, knots_v, u: np.ndarray) -> np.ndarray:
    bu = _basis_matrix(knots_u, u[:, 0])
    bv = _basis_matrix(knots_v, u[:, 1])
    n = len(u)
    return np.einsum("na,nb->nab", bu, bv).reshape(n, -1)


def _irls_solve(phi: np.ndarray, targets: np.ndarray, mu: float,
                bending: np.ndarray, delta: float, iterations: int) -> np.ndarray:
    """Per-channel IRLS for the smoothed-L1 data term plus bending prior."""
    n_coeff = phi.shape[1]
    coeff = np.zeros((n_coeff, 3))
    weights = np.ones_like(targets)
    for _ in range(iterations):
        for ch in range(3):
            w = weights[:, ch]
            a = phi.T @ (w[:, None] * phi) + mu * bending
            rhs = phi.T @ (w * targets[:, ch])
            coeff[:, ch] = np.linalg.solve(a, rhs)
        residual = phi @ coeff - targets
        weights = 0.5 / np.sqrt(residual**2 + delta**2)
    return coeff


def fit_surface(u: np.ndarray, x: np.ndarray,
                cfg: SplineFitConfig | None = None) -> tuple[BBSurface, np.ndarray]:
    """Fit a robust bicubic B-spline surface to pixel-indexed 3D points.

    Parameters
    ----------
    u:
        (n, 2) pixel parameters (left-image coordinates), n >= 4.
    x:
        (n, 3) triangulated 3D points in um.

    Returns
    -------
    (surface, rejected_mask) where the mask marks points whose L1 residual
    after the first fit exceeded ``cfg.epsilon``; the returned surface is
    re-estimated once on the survivors.  The domain is the bounding
    rectangle of all input pixels expanded by 1% per side.

    Raises
    ------
    DegenerateDomain
        If the pixels are collinear (no 2D parameter domain).
    EmptyAfterRejection
        If every point was rejected; ``epsilon`` is too small.
    """
    cfg = SplineFitConfig() if cfg is None else cfg
    u = check_points2(u, "u", min_rows=4)
    x = check_points3(x, "x")
    if len(x) != len(u):
        raise ValueError("u and x must have the same length")

    centered = u - u.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= numeric_config.collinearity_rtol * sv[0]:
        raise DegenerateDomain("parametrization pixels are collinear")

    lo = u.min(axis=0)
    hi = u.max(axis=0)
    pad = 0.01 * (hi - lo)
    knots_u = _clamped_knots(lo[0] - pad[0], hi[0] + pad[0], cfg.grid[0])
    knots_v = _clamped_knots(lo[1] - pad[1], hi[1] + pad[1], cfg.grid[1])

    bending = _bending_matrix((knots_u, knots_v))
    phi = _design_matrix(knots_u, knots_v, u)
    coeff = _irls_solve(phi, x, cfg.mu, bending, cfg.irls_delta, cfg.irls_iterations)

    l1_residual = np.abs(phi @ coeff - x).sum(axis=1)
    rejected = l1_residual > cfg.epsilon
    if rejected.all():
        raise EmptyAfterRejection(
            f"all {len(u)} points exceed epsilon = {cfg.epsilon}")
    if rejected.any():
        keep = ~rejected
        coeff = _irls_solve(phi[keep], x[keep], cfg.mu, bending,
                            cfg.irls_delta, cfg.irls_iterations)

    surface = BBSurface(knots_u=knots_u, knots_v=knots_v,
                        coefficients=coeff.reshape(cfg.grid[0], cfg.grid[1], 3))
    return surface, rejected
