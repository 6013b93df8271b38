"""Projection-image processing feeding the pose estimator.

Masks are plain boolean arrays of the image shape.  Image coordinates
follow the raster convention: v (rows) increases downward, pixel centers
sit at integer (u, v).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (DegenerateHistogram, DegenerateMask, EmptyResult,
                     OutOfFrame)
from .geometry import DetectorPoint


def otsu_level(image: np.ndarray, bins: int = 256) -> float:
    """Threshold maximizing inter-class variance of the grey histogram."""
    image = np.asarray(image, dtype=float)
    lo, hi = float(image.min()), float(image.max())
    if hi <= lo:
        raise DegenerateHistogram("image is constant; no threshold exists")
    counts, edges = np.histogram(image, bins=bins, range=(lo, hi))
    counts = counts.astype(float)
    total = counts.sum()
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(counts)
    w1 = total - w0
    mass = np.cumsum(counts * centers)
    mu0 = np.divide(mass, w0, out=np.zeros_like(mass), where=w0 > 0)
    mu1 = np.divide(mass[-1] - mass, w1, out=np.zeros_like(mass), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    # ties form a plateau across empty gap bins; take its middle
    best = np.flatnonzero(between == between.max())
    return float(centers[best[best.size // 2]])


def threshold(image: np.ndarray, level="auto") -> np.ndarray:
    """Foreground mask of pixels above the level.

    In line-integral images the attenuating object is the bright part,
    so foreground = image > level.  level may be a number or "auto"
    (Otsu); a constant image raises DegenerateHistogram.
    """
    image = np.asarray(image, dtype=float)
    if isinstance(level, str):
        if level != "auto":
            raise ValueError(f"unknown threshold mode {level!r}")
        level = otsu_level(image)
    return image > float(level)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation with a square element of half-width radius."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_dilation(mask, structure=structure)


def remove_features(mask: np.ndarray, nuisance_masks=(), exclude_rects=()) -> np.ndarray:
    """Strip nuisance features and excluded regions from a foreground mask.

    nuisance_masks are boolean arrays (e.g. separately thresholded and
    dilated bright parts); exclude_rects are (row0, row1, col0, col1)
    half-open index ranges, handy when holder positions are known a
    priori.  Raises EmptyResult when nothing survives.
    """
    out = mask.copy()
    for nm in nuisance_masks:
        out &= ~np.asarray(nm, dtype=bool)
    for row0, row1, col0, col1 in exclude_rects:
        out[row0:row1, col0:col1] = False
    if not out.any():
        raise EmptyResult("mask is empty after feature removal")
    return out


@dataclass
class AxisObservation:
    """Projected axis endpoints in one view; top.v < bottom.v by swap."""

    top: DetectorPoint
    bottom: DetectorPoint
    view: int = -1

    def __post_init__(self):
        if self.top.v > self.bottom.v:
            self.top, self.bottom = self.bottom, self.top


def _band_center(mask: np.ndarray, row_lo: int, row_hi: int, outward: int) -> DetectorPoint:
    band = mask[row_lo:row_hi + 1]
    rows, cols = np.nonzero(band)
    if cols.size == 0:
        raise DegenerateMask(f"no foreground pixels in rows {row_lo}..{row_hi}")
    c_left = cols.min()
    c_right = cols.max()
    # ties along an extreme column resolve to the outermost row; anything
    # else treats the two bands asymmetrically and biases the midpoint
    pick = np.min if outward < 0 else np.max
    v_left = pick(rows[cols == c_left])
    v_right = pick(rows[cols == c_right])
    u = 0.5 * (c_left + c_right)
    v = row_lo + 0.5 * float(v_left + v_right)
    return DetectorPoint(float(u), float(v))


def axis_endpoints(mask: np.ndarray, band: int = 1, view: int = -1) -> AxisObservation:
    """Symmetry-axis endpoints from the extremal-row corner pixels.

    Within the top band of rows the leftmost and rightmost foreground
    pixels are paired and their center is the top endpoint; likewise at
    the bottom.  The silhouette of a rotationally symmetric object is
    mirror-symmetric about its projected axis, so these centers lie on
    the axis up to rasterization.
    """
    rows = np.nonzero(mask.any(axis=1))[0]
    if rows.size == 0:
        raise DegenerateMask("mask is empty")
    r_min, r_max = int(rows[0]), int(rows[-1])
    if r_max - r_min < 1:
        raise DegenerateMask("mask spans fewer than two rows")
    top = _band_center(mask, r_min, min(r_min + band, r_max), outward=-1)
    bottom = _band_center(mask, max(r_max - band, r_min), r_max, outward=+1)
    return AxisObservation(top=top, bottom=bottom, view=view)


def bilinear_sample(image: np.ndarray, u, v):
    """Sample an image at continuous (u, v); returns (values, valid mask)."""
    image = np.asarray(image, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n_rows, n_cols = image.shape
    valid = (u >= 0) & (u <= n_cols - 1) & (v >= 0) & (v <= n_rows - 1)
    uc = np.clip(u, 0, n_cols - 1)
    vc = np.clip(v, 0, n_rows - 1)
    iu = np.minimum(uc.astype(int), n_cols - 2) if n_cols > 1 else np.zeros_like(uc, dtype=int)
    iv = np.minimum(vc.astype(int), n_rows - 2) if n_rows > 1 else np.zeros_like(vc, dtype=int)
    fu = uc - iu
    fv = vc - iv
    i1 = np.minimum(iu + 1, n_cols - 1)
    j1 = np.minimum(iv + 1, n_rows - 1)
    vals = (image[iv, iu] * (1 - fu) * (1 - fv)
            + image[iv, i1] * fu * (1 - fv)
            + image[j1, iu] * (1 - fu) * fv
            + image[j1, i1] * fu * fv)
    return vals, valid


def strip_profile(image: np.ndarray, axis: AxisObservation,
                  offset: float, width: float = 1.0) -> float:
    """Mean grey value in a strip parallel to the projected axis.

    offset is the signed perpendicular distance in pixels; for an axis
    pointing down the image, positive offsets lie toward +u.  width is
    the strip thickness in pixels.  Samples falling off the frame are
    ignored; a fully out-of-frame strip raises OutOfFrame.
    """
    p0 = np.array([axis.top.u, axis.top.v])
    p1 = np.array([axis.bottom.u, axis.bottom.v])
    length = float(np.linalg.norm(p1 - p0))
    if length == 0.0:
        raise DegenerateMask("axis endpoints coincide")
    a_hat = (p1 - p0) / length
    n_hat = np.array([a_hat[1], -a_hat[0]])
    ts = np.linspace(0.0, length, max(2, int(round(length)) + 1))
    n_lines = max(1, int(round(width)))
    offs = offset + (np.arange(n_lines) - (n_lines - 1) / 2.0)
    uu = p0[0] + ts[:, None] * a_hat[0] + offs[None, :] * n_hat[0]
    vv = p0[1] + ts[:, None] * a_hat[1] + offs[None, :] * n_hat[1]
    vals, valid = bilinear_sample(image, uu, vv)
    if not valid.any():
        raise OutOfFrame("strip lies entirely outside the image")
    return float(vals[valid].mean())
