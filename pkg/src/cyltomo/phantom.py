"""Analytic test objects on cylindrical grids.

Line phantoms carry a raised-cosine profile amplitude*(1 + cos(.))/2 so
attenuation stays non-negative and the ideal modulation is exactly 1.
Assembly phantoms rasterize labelled components (annular sectors /
cylinder segments) for the batch-inspection experiments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import OverlapWarning
from .grid import CylGrid, CylVolume, region_mask

# Published simulation shape and its quarter-scale counterpart for fast runs.
PAPER_SHAPE = (32, 1608, 256)
DESK_SHAPE = (16, 402, 64)


def frequency_sweep(s_r: int) -> list:
    """Line counts 1, 2, 4, ... doubled up to s_r / 2."""
    out = []
    n = 1
    while n <= s_r // 2:
        out.append(n)
        n *= 2
    return out


@dataclass
class LinePhantomSpec:
    """Description of an azimuthal or radial line phantom.

    direction is "azimuthal" (Siemens-star-like spokes) or "radial"
    (concentric rings); n_lines must be at least 1 and, for frequency
    sweeps, at most shape[2] / 2.
    """

    direction: str
    n_lines: int
    shape: tuple = DESK_SHAPE
    amplitude: float = 0.1
    radius: float = 8.0
    height: float = 1.0

    def __post_init__(self):
        if self.direction not in ("azimuthal", "radial"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.n_lines < 1:
            raise ValueError("n_lines must be >= 1")
        if self.amplitude <= 0.0:
            raise ValueError("amplitude must be positive")

    def grid(self) -> CylGrid:
        s_h, s_t, s_r = self.shape
        return CylGrid(s_h, s_t, s_r, self.radius, self.height)


def make_azimuthal_line_phantom(spec: LinePhantomSpec) -> CylVolume:
    """Spoke pattern mu = amplitude * (1 + cos(n_l * theta)) / 2.

    Independent of r and h; every slice is the Siemens-star-like pattern.
    The pattern phase puts a crest on the first azimuthal voxel center,
    so the discretized phantom attains the full [0, amplitude] swing
    whenever the grid divides the period evenly.
    """
    if spec.direction != "azimuthal":
        raise ValueError("spec.direction must be 'azimuthal'")
    grid = spec.grid()
    idx = np.arange(grid.n_theta)
    profile = 0.5 * spec.amplitude * (1.0 + np.cos(spec.n_lines * idx * grid.d_theta))
    mu = np.broadcast_to(profile[None, :, None], grid.shape).copy()
    return CylVolume(grid, mu)


def make_radial_line_phantom(spec: LinePhantomSpec) -> CylVolume:
    """Concentric rings mu = amplitude * (1 + cos(2*pi*n_l*r/R)) / 2.

    A crest sits on the innermost ring (the value at r = 0 is the full
    amplitude) and one line period spans n_r / n_l radial voxels, which
    is also the sliding-window width of the radial MTF analysis.
    """
    if spec.direction != "radial":
        raise ValueError("spec.direction must be 'radial'")
    grid = spec.grid()
    idx = np.arange(grid.n_r)
    profile = 0.5 * spec.amplitude * (
        1.0 + np.cos(2.0 * math.pi * spec.n_lines * idx / grid.n_r)
    )
    mu = np.broadcast_to(profile[None, None, :], grid.shape).copy()
    return CylVolume(grid, mu)


def make_line_phantom(spec: LinePhantomSpec) -> CylVolume:
    """Dispatch on spec.direction."""
    if spec.direction == "azimuthal":
        return make_azimuthal_line_phantom(spec)
    return make_radial_line_phantom(spec)


@dataclass
class ComponentSpec:
    """One assembly component as a cylindrical-coordinate primitive.

    Ranges are (lo, hi) in object coordinates; a theta range with
    lo > hi wraps through 2*pi; None leaves a dimension unbounded.
    Absent components (present=False) are skipped during rasterization,
    which is how missing-part samples are synthesized.
    """

    label: str
    mu: float
    r_range: tuple | None = None
    theta_range: tuple | None = None
    h_range: tuple | None = None
    present: bool = True

    def __post_init__(self):
        if self.mu < 0.0:
            raise ValueError("component mu must be >= 0")

    def mask(self, grid: CylGrid) -> np.ndarray:
        return region_mask(grid, self.r_range, self.theta_range, self.h_range)


def make_assembly_phantom(components, grid: CylGrid) -> CylVolume:
    """Rasterize components onto the grid; later entries overwrite earlier.

    Emits an OverlapWarning when a component overwrites voxels already
    claimed; overlap is legal (e.g. an insert inside the body).
    """
    mu = np.zeros(grid.shape)
    claimed = np.zeros(grid.shape, dtype=bool)
    for comp in components:
        if not comp.present:
            continue
        m = comp.mask(grid)
        if np.any(m & claimed):
            warnings.warn(
                f"component {comp.label!r} overwrites previously set voxels",
                OverlapWarning,
                stacklevel=2,
            )
        mu[m] = comp.mu
        claimed |= m
    return CylVolume(grid, mu)


def make_weight_map(regions, grid: CylGrid, default_weight: float = 1.0) -> np.ndarray:
    """Per-voxel back-projection weights in [0, 1] on the grid.

    regions is a sequence of (ComponentSpec, weight) pairs; later entries
    overwrite earlier ones and unlisted voxels keep default_weight.  With
    an all-ones map, weighted SART reduces to plain SART.
    """
    if not 0.0 <= default_weight <= 1.0:
        raise ValueError("default_weight must lie in [0, 1]")
    weights = np.full(grid.shape, float(default_weight))
    for comp, w in regions:
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"weight {w} for region {comp.label!r} outside [0, 1]")
        weights[comp.mask(grid)] = float(w)
    return weights
