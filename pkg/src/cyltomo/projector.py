"""Forward projection and voxel-driven back-projection.

The forward operator is pixel driven: each detector pixel's ray is
sampled equidistantly (spacing ``step``) and the interpolated attenuation
is summed, realizing line integrals with intersection weights equal to
(sample count in voxel) * step.  The same pass counts in-support samples,
giving the per-ray weight sums SART divides by.  The backward operator is
voxel driven: every voxel center is projected into the view and gathers
the correction image through its bilinear detector footprint.  The pair
is deliberately unmatched; both sides honor the same geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NonPositiveIntensity
from .geometry import ScanGeometry, view_basis
from .grid import CartGrid, CartVolume, CylGrid, CylVolume

LINE_INTEGRAL = "line_integral"
INTENSITY = "intensity"


@dataclass
class RaySamplingConfig:
    """Equidistant ray-sampling parameters.

    step is the sample spacing in mm; None picks half the smallest voxel
    extent of the traversed grid (sub-voxel, bounds aliasing of the
    sampled intersection weights).  supersample > 1 averages that many
    sub-rays per pixel axis, for high-fidelity phantom simulation.
    """

    step: float | None = None
    supersample: int = 1
    interpolation: str = "linear"

    def __post_init__(self):
        if self.step is not None and self.step <= 0.0:
            raise ValueError("step must be positive")
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")
        if self.interpolation not in ("linear", "nearest"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")

    def step_for(self, vol) -> float:
        if self.step is not None:
            return self.step
        g = vol.grid
        if isinstance(vol, CylVolume):
            return 0.5 * min(g.d_r, g.d_h)
        return 0.5 * g.voxel_size


@dataclass
class ProjectionSet:
    """Stack of detector images with their acquisition geometry.

    images has shape (P, H, W); kind is "intensity" or "line_integral".
    """

    geom: ScanGeometry
    images: np.ndarray
    kind: str = LINE_INTEGRAL

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        expected = (self.geom.n_proj, self.geom.det_rows, self.geom.det_cols)
        if self.images.shape != expected:
            raise ValueError(
                f"images shape {self.images.shape} does not match geometry {expected}"
            )
        if self.kind not in (LINE_INTEGRAL, INTENSITY):
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if not np.all(np.isfinite(self.images)):
            raise ValueError("projection images contain non-finite values")


def _aligned_basis(grid: CylGrid, geom: ScanGeometry, i: int):
    """View ray-casting basis mapped into the grid-aligned frame."""
    src, origin, du, dv = view_basis(geom, i)
    a = grid.rotation.T
    t = grid.pose.t
    return a @ (src - t), a @ (origin - t), a @ du, a @ dv


def forward_project(vol, geom: ScanGeometry, i: int,
                    cfg: RaySamplingConfig | None = None,
                    return_weights: bool = False):
    """Simulate the line-integral image of view i.

    Returns the (H, W) image; with return_weights=True also the per-pixel
    sampled path length (the SART row sums sum_l t_jl).
    """
    cfg = cfg or RaySamplingConfig()
    step = cfg.step_for(vol)
    nearest = cfg.interpolation == "nearest"
    out_p = np.zeros((geom.det_rows, geom.det_cols))
    out_w = np.zeros((geom.det_rows, geom.det_cols))
    if isinstance(vol, CylVolume):
        a_src, a_origin, a_du, a_dv = _aligned_basis(vol.grid, geom, i)
        _kernels.forward_cyl(vol.mu, vol.grid.radius, vol.grid.height,
                             a_src, a_origin, a_du, a_dv,
                             geom.det_rows, geom.det_cols, step,
                             cfg.supersample, nearest, out_p, out_w)
    elif isinstance(vol, CartVolume):
        src, origin, du, dv = view_basis(geom, i)
        g = vol.grid
        _kernels.forward_cart(vol.mu, g.voxel_size, g.origin[0], g.origin[1],
                              g.origin[2], src, origin, du, dv,
                              geom.det_rows, geom.det_cols, step,
                              cfg.supersample, nearest, out_p, out_w)
    else:
        raise TypeError(f"cannot project object of type {type(vol).__name__}")
    if return_weights:
        return out_p, out_w
    return out_p


def forward_project_all(vol, geom: ScanGeometry,
                        cfg: RaySamplingConfig | None = None) -> ProjectionSet:
    """Simulate every view of the trajectory as one line-integral stack."""
    images = np.zeros((geom.n_proj, geom.det_rows, geom.det_cols))
    for i in range(geom.n_proj):
        images[i] = forward_project(vol, geom, i, cfg)
    return ProjectionSet(geom, images, LINE_INTEGRAL)


def back_project(correction: np.ndarray, geom: ScanGeometry, i: int, grid,
                 out=None):
    """Gather a correction image onto the voxels of view i.

    Each voxel center is projected; the bilinear footprint weights serve
    as the per-voxel intersection proxy t_jm.  Returns (numerator,
    denominator) arrays of the grid's shape; voxels projecting outside
    the detector (or behind the source) accumulate nothing, leaving
    denominator 0.  Pass out=(num, den) to accumulate across views.
    """
    correction = np.ascontiguousarray(correction, dtype=np.float64)
    if correction.shape != (geom.det_rows, geom.det_cols):
        raise ValueError("correction image does not match detector dims")
    if out is None:
        num = np.zeros(grid.shape)
        den = np.zeros(grid.shape)
    else:
        num, den = out
    phi = geom.stage_angles[i]
    cphi, sphi = np.cos(phi), np.sin(phi)
    u0, v0 = geom.principal_point
    if isinstance(grid, CylGrid):
        _kernels.backproject_cyl(correction, u0, v0, geom.pixel_pitch,
                                 geom.sdd, geom.sod, cphi, sphi,
                                 grid.rotation, grid.pose.t,
                                 grid.radius, grid.height, num, den)
    elif isinstance(grid, CartGrid):
        _kernels.backproject_cart(correction, u0, v0, geom.pixel_pitch,
                                  geom.sdd, geom.sod, cphi, sphi,
                                  grid.voxel_size, grid.origin[0],
                                  grid.origin[1], grid.origin[2], num, den)
    else:
        raise TypeError(f"cannot back-project onto {type(grid).__name__}")
    return num, den


def intensities_to_line_integrals(ps: ProjectionSet, i0) -> ProjectionSet:
    """Beer-Lambert conversion p = -ln(I / I0).

    i0 is the flat-field: a scalar or an (H, W) image broadcast over all
    views.  Raises NonPositiveIntensity if any I or I0 is <= 0.
    """
    i0 = np.asarray(i0, dtype=float)
    if np.any(i0 <= 0.0):
        raise NonPositiveIntensity("flat field contains values <= 0")
    if np.any(ps.images <= 0.0):
        raise NonPositiveIntensity("intensity images contain values <= 0")
    p = -np.log(ps.images / i0)
    return ProjectionSet(ps.geom, p, LINE_INTEGRAL)
