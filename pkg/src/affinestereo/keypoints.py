"""Sub-pixel keypoint extraction from per-channel activation heatmaps.

Heatmaps arrive as files produced elsewhere (one channel per landmark);
this module only turns a heatmap into a sub-pixel detection: locate the
peak activation, then take the activation-weighted mean of pixel positions
over a disc of radius ``3 * sigma`` around it.

The weighted mean is normalized by the total activation inside the disc
(not by the pixel count), which makes a single-pixel peak map exactly to
that pixel and keeps symmetric activation patterns centered.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import AllZeroHeatmap

__all__ = [
    "Heatmap",
    "KeypointDetection",
    "extract_keypoint",
    "read_heatmap",
    "write_heatmap",
]


@dataclass(frozen=True)
class Heatmap:
    """One keypoint channel: a grid of non-negative activations.

    ``values[v, u]`` is the activation at column u, row v.  ``sigma`` is the
    Gaussian target standard deviation (pixels) used at training time; it
    only controls the extraction window here.
    """

    values: np.ndarray
    sigma: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("heatmap values must be a non-empty 2-D grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("heatmap values must be finite")
        if np.any(values < 0):
            raise ValueError("heatmap values must be non-negative")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class KeypointDetection:
    """Sub-pixel location of one detected keypoint."""

    location: np.ndarray      # (u, v) pixels
    peak_value: float
    channel_index: int


def _disc_offsets(radius: float) -> np.ndarray:
    """Integer (du, dv) offsets with Euclidean norm <= radius."""
    r = int(np.floor(radius))
    du, dv = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1))
    keep = du**2 + dv**2 <= radius**2
    return np.stack([du[keep], dv[keep]], axis=1)


def extract_keypoint(heatmap: Heatmap, channel_index: int = 1) -> KeypointDetection:
    """Locate a keypoint as the weighted centroid around the peak activation.

    The peak is the argmax of the grid (ties broken by smallest row-major
    index).  The output is the activation-weighted mean of in-bounds pixel
    positions within Euclidean distance ``3 * sigma`` of the peak.

    Raises
    ------
    AllZeroHeatmap
        If the maximum activation is zero: nothing was detected.
    """
    values = heatmap.values
    flat_idx = int(np.argmax(values))            # first occurrence, row-major
    v_max, u_max = np.unravel_index(flat_idx, values.shape)
    peak = float(values[v_max, u_max])
    if peak == 0.0:
        raise AllZeroHeatmap("heatmap has no nonzero activation")

    offsets = _disc_offsets(3.0 * heatmap.sigma)
    u = u_max + offsets[:, 0]
    v = v_max + offsets[:, 1]
    inside = (u >= 0) & (u < heatmap.width) & (v >= 0) & (v < heatmap.height)
    u, v = u[inside], v[inside]
    w = values[v, u]
    mass = float(w.sum())
    # mass >= peak > 0: the peak pixel is always inside its own disc
    location = np.array([float(u @ w), float(v @ w)]) / mass
    return KeypointDetection(location=location, peak_value=peak,
                             channel_index=int(channel_index))


def write_heatmap(path: str | Path, heatmap: Heatmap) -> None:
    """Write the heatmap file format: text header, float32 binary payload.

    The header line is ``width height sigma``; the payload is row-major
    float32, little-endian.
    """
    header = f"{heatmap.width} {heatmap.height} {heatmap.sigma!r}\n"
    payload = heatmap.values.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header.encode("ascii") + payload)


def read_heatmap(path: str | Path) -> Heatmap:
    """Read a heatmap written by :func:`write_heatmap`."""
    raw = Path(path).read_bytes()
    with io.BytesIO(raw) as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 3:
            raise ValueError(f"bad heatmap header in {path}: expected 'width height sigma'")
        width, height = int(header[0]), int(header[1])
        sigma = float(header[2])
        payload = fh.read()
    expected = width * height * 4
    if len(payload) != expected:
        raise ValueError(
            f"heatmap payload in {path} has {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(float)
    return Heatmap(values=values, sigma=sigma)
