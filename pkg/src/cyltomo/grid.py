"""Cylindrical and Cartesian voxel grids, coordinate transforms, sampling.

A cylindrical grid is attached to its object: voxel indices (h, theta, r)
live in the object-aligned frame and the grid's pose places that frame in
the world.  Cell centers sit at

    h     = (k + 0.5) * dh - height/2      (axis origin at mid-height)
    theta = (j + 0.5) * dtheta
    r     = (m + 0.5) * dr

so the cylinder occupies r in [0, radius], h in [-height/2, height/2].
Cartesian grids are world-aligned boxes; mu is indexed (z, y, x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .geometry import Pose

TWO_PI = 2.0 * math.pi


class CylCoord(NamedTuple):
    """Cylindrical coordinates (mm, rad, mm); fields may be arrays."""

    r: float
    theta: float
    h: float


def cart_to_cyl(x_aligned) -> CylCoord:
    """Aligned Cartesian (x', y', z') to (r, theta, h), theta in [0, 2*pi).

    On the axis (r = 0) theta is 0 by convention.  Accepts (..., 3) arrays.
    """
    x_aligned = np.asarray(x_aligned, dtype=float)
    xs, ys, zs = x_aligned[..., 0], x_aligned[..., 1], x_aligned[..., 2]
    r = np.hypot(xs, ys)
    theta = np.mod(np.arctan2(ys, xs), TWO_PI)
    theta = np.where(r == 0.0, 0.0, theta)
    if x_aligned.ndim == 1:
        return CylCoord(float(r), float(theta), float(zs))
    return CylCoord(r, theta, zs)


def cyl_to_cart(c: CylCoord) -> np.ndarray:
    """(r, theta, h) back to aligned Cartesian coordinates."""
    r = np.asarray(c.r, dtype=float)
    theta = np.asarray(c.theta, dtype=float)
    h = np.asarray(c.h, dtype=float)
    return np.stack(
        np.broadcast_arrays(r * np.cos(theta), r * np.sin(theta), h), axis=-1
    )


@dataclass
class CylGrid:
    """Object-aligned cylindrical voxel grid.

    Parameters
    ----------
    n_h, n_theta, n_r : int
        Voxel counts along height, azimuth and radius.
    radius, height : float
        Physical extent, mm.
    pose : Pose
        Placement of the grid axis in the world frame.  Treated as
        immutable; the alignment matrix is precomputed once.
    """

    n_h: int
    n_theta: int
    n_r: int
    radius: float
    height: float
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if min(self.n_h, self.n_theta, self.n_r) < 1:
            raise ValueError("voxel counts must be >= 1")
        if self.radius <= 0.0 or self.height <= 0.0:
            raise ValueError("radius and height must be positive")
        self._rot = self.pose.rotation()

    @property
    def shape(self) -> tuple:
        return (self.n_h, self.n_theta, self.n_r)

    @property
    def d_r(self) -> float:
        return self.radius / self.n_r

    @property
    def d_theta(self) -> float:
        return TWO_PI / self.n_theta

    @property
    def d_h(self) -> float:
        return self.height / self.n_h

    @property
    def rotation(self) -> np.ndarray:
        """Precomputed object-to-world rotation matrix."""
        return self._rot

    def h_centers(self) -> np.ndarray:
        return (np.arange(self.n_h) + 0.5) * self.d_h - 0.5 * self.height

    def theta_centers(self) -> np.ndarray:
        return (np.arange(self.n_theta) + 0.5) * self.d_theta

    def r_centers(self) -> np.ndarray:
        return (np.arange(self.n_r) + 0.5) * self.d_r

    def with_pose(self, pose: Pose) -> "CylGrid":
        return CylGrid(self.n_h, self.n_theta, self.n_r, self.radius, self.height, pose)

    def to_dict(self) -> dict:
        return {
            "dims": [self.n_h, self.n_theta, self.n_r],
            "radius_mm": self.radius,
            "height_mm": self.height,
            "pose": self.pose.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CylGrid":
        nh, nt, nr = (int(v) for v in d["dims"])
        return cls(nh, nt, nr, float(d["radius_mm"]), float(d["height_mm"]),
                   Pose.from_dict(d["pose"]))


@dataclass
class CartGrid:
    """World-aligned Cartesian voxel grid (cubic voxels)."""

    n_x: int
    n_y: int
    n_z: int
    voxel_size: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if min(self.n_x, self.n_y, self.n_z) < 1:
            raise ValueError("voxel counts must be >= 1")
        if self.voxel_size <= 0.0:
            raise ValueError("voxel_size must be positive")
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)

    @property
    def shape(self) -> tuple:
        return (self.n_z, self.n_y, self.n_x)

    @classmethod
    def centered(cls, n_x: int, n_y: int, n_z: int, voxel_size: float,
                 center=(0.0, 0.0, 0.0)) -> "CartGrid":
        """Grid whose box is centered on the given world point."""
        center = np.asarray(center, dtype=float)
        half = 0.5 * voxel_size * np.array([n_x, n_y, n_z], dtype=float)
        return cls(n_x, n_y, n_z, voxel_size, center - half)

    def voxel_centers(self) -> np.ndarray:
        """World centers of all voxels, shape (n_z, n_y, n_x, 3)."""
        xs = self.origin[0] + (np.arange(self.n_x) + 0.5) * self.voxel_size
        ys = self.origin[1] + (np.arange(self.n_y) + 0.5) * self.voxel_size
        zs = self.origin[2] + (np.arange(self.n_z) + 0.5) * self.voxel_size
        zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([xx, yy, zz], axis=-1)

    def to_dict(self) -> dict:
        return {
            "dims": [self.n_z, self.n_y, self.n_x],
            "voxel_size_mm": self.voxel_size,
            "origin_mm": [float(v) for v in self.origin],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CartGrid":
        nz, ny, nx = (int(v) for v in d["dims"])
        return cls(nx, ny, nz, float(d["voxel_size_mm"]),
                   np.asarray(d["origin_mm"], dtype=float))


def _check_mu(mu, shape) -> np.ndarray:
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    if mu.shape != shape:
        raise ValueError(f"mu shape {mu.shape} does not match grid shape {shape}")
    if not np.all(np.isfinite(mu)):
        raise ValueError("mu contains non-finite values")
    return mu


@dataclass
class CylVolume:
    """Attenuation coefficients (1/mm) on a cylindrical grid, mu[h, theta, r]."""

    grid: CylGrid
    mu: np.ndarray

    def __post_init__(self):
        self.mu = _check_mu(self.mu, self.grid.shape)

    @classmethod
    def zeros(cls, grid: CylGrid) -> "CylVolume":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def full(cls, grid: CylGrid, value: float) -> "CylVolume":
        return cls(grid, np.full(grid.shape, float(value)))


@dataclass
class CartVolume:
    """Attenuation coefficients (1/mm) on a Cartesian grid, mu[z, y, x]."""

    grid: CartGrid
    mu: np.ndarray

    def __post_init__(self):
        self.mu = _check_mu(self.mu, self.grid.shape)

    @classmethod
    def zeros(cls, grid: CartGrid) -> "CartVolume":
        return cls(grid, np.zeros(grid.shape))


def world_to_grid(grid: CylGrid, x_world) -> CylCoord:
    """World point(s) to the grid's cylindrical coordinates.

    Applies the inverse alignment R^T (x - T) with the grid's precomputed
    rotation, then the cylindrical transform.
    """
    x_world = np.asarray(x_world, dtype=float)
    aligned = (x_world - grid.pose.t) @ grid.rotation
    return cart_to_cyl(aligned)


def grid_to_world(grid: CylGrid, c: CylCoord) -> np.ndarray:
    """Inverse of :func:`world_to_grid`."""
    return cyl_to_cart(c) @ grid.rotation.T + grid.pose.t


def _coords_to_arrays(c):
    if isinstance(c, CylCoord):
        r, th, h = np.broadcast_arrays(
            np.asarray(c.r, dtype=float),
            np.asarray(c.theta, dtype=float),
            np.asarray(c.h, dtype=float),
        )
        return r, th, h
    arr = np.asarray(c, dtype=float)
    return arr[..., 0], arr[..., 1], arr[..., 2]


def sample(vol, c, mode: str = "linear"):
    """Interpolate a volume at continuous coordinates.

    For a CylVolume, c holds (r, theta, h) grid coordinates (a CylCoord,
    possibly with array fields, or an (..., 3) array); theta interpolates
    with periodic wraparound, r and h clamp to the boundary cells, and
    points outside the support return 0.  For a CartVolume, c holds world
    (x, y, z).  mode is "linear" (default) or "nearest".
    """
    if mode not in ("linear", "nearest"):
        raise ValueError(f"unknown interpolation mode {mode!r}")
    nearest = mode == "nearest"
    if isinstance(vol, CylVolume):
        r, th, h = _coords_to_arrays(c)
        shape = np.shape(r)
        r = np.ascontiguousarray(np.atleast_1d(r), dtype=np.float64).ravel()
        th = np.ascontiguousarray(np.atleast_1d(th), dtype=np.float64).ravel()
        h = np.ascontiguousarray(np.atleast_1d(h), dtype=np.float64).ravel()
        out = np.empty(r.size)
        _kernels.sample_cyl_many(vol.mu, vol.grid.radius, vol.grid.height,
                                 r, th, h, nearest, out)
        if shape == ():
            return float(out[0])
        return out.reshape(shape)
    if isinstance(vol, CartVolume):
        arr = np.asarray(c, dtype=float)
        scalar = arr.ndim == 1
        pts = arr.reshape(-1, 3)
        xs = np.ascontiguousarray(pts[:, 0])
        ys = np.ascontiguousarray(pts[:, 1])
        zs = np.ascontiguousarray(pts[:, 2])
        out = np.empty(xs.size)
        g = vol.grid
        _kernels.sample_cart_many(vol.mu, g.voxel_size, g.origin[0], g.origin[1],
                                  g.origin[2], xs, ys, zs, nearest, out)
        if scalar:
            return float(out[0])
        return out.reshape(arr.shape[:-1])
    raise TypeError(f"cannot sample object of type {type(vol).__name__}")


def resample_cyl_to_cart(vol: CylVolume, target: CartGrid, mode: str = "linear") -> CartVolume:
    """Evaluate a cylindrical volume on a Cartesian grid (world frame)."""
    centers = target.voxel_centers().reshape(-1, 3)
    coords = world_to_grid(vol.grid, centers)
    values = sample(vol, coords, mode=mode)
    return CartVolume(target, values.reshape(target.shape))


def resample_cyl_to_cyl(vol: CylVolume, target: CylGrid, mode: str = "linear") -> CylVolume:
    """Resample between object-aligned cylindrical grids.

    Both grids live in object coordinates, so their poses play no role;
    the same template volume therefore serves any posed copy of the grid.
    """
    hh, tt, rr = np.meshgrid(target.h_centers(), target.theta_centers(),
                             target.r_centers(), indexing="ij")
    values = sample(vol, CylCoord(rr, tt, hh), mode=mode)
    return CylVolume(target, values.reshape(target.shape))


def region_mask(grid: CylGrid, r_range=None, theta_range=None, h_range=None) -> np.ndarray:
    """Boolean mask of voxels whose centers fall in the coordinate ranges.

    Ranges are (lo, hi) in grid units; None leaves the dimension
    unconstrained.  A theta range with lo > hi wraps through 2*pi.
    """
    mask = np.ones(grid.shape, dtype=bool)
    if r_range is not None:
        r = grid.r_centers()
        mask &= ((r >= r_range[0]) & (r <= r_range[1]))[None, None, :]
    if theta_range is not None:
        th = grid.theta_centers()
        lo = theta_range[0] % TWO_PI
        hi = theta_range[1] % TWO_PI
        if lo <= hi:
            sel = (th >= lo) & (th <= hi)
        else:
            sel = (th >= lo) | (th <= hi)
        mask &= sel[None, :, None]
    if h_range is not None:
        h = grid.h_centers()
        mask &= ((h >= h_range[0]) & (h <= h_range[1]))[:, None, None]
    return mask
