"""Poses, cone-beam scan geometry and per-view perspective projection.

Conventions (used consistently by every module):

* World frame: z is the rotation-stage axis (up), y is the optical axis
  pointing from source to detector at stage angle 0, x completes a
  right-handed frame.
* The stage rotation is modeled by rotating the object point by +phi
  about z; source and detector stay fixed in the formulas and are
  rotated by -phi when an explicit world-frame ray is needed.
* The source sits at (0, -sod, 0); the detector plane is y = sdd - sod
  with u along world x and v along world z, in units of pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateRay

TWO_PI = 2.0 * math.pi

# Relative depth below which a point counts as sitting in the source plane.
DEGENERATE_DEPTH_FRACTION = 1e-6


def wrap_angle(angle: float) -> float:
    """Wrap an angle to the canonical interval (-pi, pi]."""
    wrapped = (angle + math.pi) % TWO_PI - math.pi
    if wrapped == -math.pi:
        wrapped = math.pi
    return wrapped


def rot_z(angle: float) -> np.ndarray:
    """Rotation matrix about the world z-axis."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(angle: float) -> np.ndarray:
    """Rotation matrix about the world x-axis."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass
class Pose:
    """Six-DOF rigid alignment: intrinsic zxz Euler angles plus translation.

    Angles are normalized on construction to the canonical ranges
    beta in [0, pi], alpha and gamma in (-pi, pi], using the zxz
    identity R(a, b, g) = R(a+pi, -b, g+pi); the represented rotation
    is unchanged.
    """

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(3)
        beta = wrap_angle(self.beta)
        alpha, gamma = self.alpha, self.gamma
        if beta < 0.0:
            alpha += math.pi
            gamma += math.pi
            beta = -beta
        self.alpha = wrap_angle(alpha)
        self.beta = beta
        self.gamma = wrap_angle(gamma)

    def rotation(self) -> np.ndarray:
        return euler_to_matrix(self)

    def to_dict(self) -> dict:
        return {
            "alpha_rad": self.alpha,
            "beta_rad": self.beta,
            "gamma_rad": self.gamma,
            "t_mm": [float(v) for v in self.t],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(
            alpha=float(d["alpha_rad"]),
            beta=float(d["beta_rad"]),
            gamma=float(d["gamma_rad"]),
            t=np.asarray(d["t_mm"], dtype=float),
        )


def euler_to_matrix(pose: Pose) -> np.ndarray:
    """Rotation matrix of the intrinsic zxz Euler angles.

    Returns Rz(alpha) @ Rx(beta) @ Rz(gamma); orthonormal with det +1.
    """
    return rot_z(pose.alpha) @ rot_x(pose.beta) @ rot_z(pose.gamma)


def align_point(pose: Pose, x) -> np.ndarray:
    """Map object coordinates to world coordinates: R x + T.

    Accepts a single 3-vector or an (..., 3) array.
    """
    x = np.asarray(x, dtype=float)
    return x @ pose.rotation().T + pose.t


def inverse_align_point(pose: Pose, x_world) -> np.ndarray:
    """Inverse of :func:`align_point`: R^T (x_world - T)."""
    x_world = np.asarray(x_world, dtype=float)
    return (x_world - pose.t) @ pose.rotation()


@dataclass
class ScanGeometry:
    """Circular(-ish) cone-beam layout with one stage angle per projection.

    Parameters
    ----------
    sdd, sod : float
        Source-detector and source-object distances, mm.  sdd > sod > 0.
    det_cols, det_rows : int
        Detector width W and height H in pixels.
    pixel_pitch : float
        Square pixel size p_d, mm.
    principal_point : (float, float)
        (u0, v0), pixel coordinates where the optical axis hits the
        detector.
    stage_angles : array
        Rotation-stage angle of each projection, radians.
    """

    sdd: float
    sod: float
    det_cols: int
    det_rows: int
    pixel_pitch: float
    principal_point: tuple
    stage_angles: np.ndarray

    def __post_init__(self):
        self.stage_angles = np.atleast_1d(np.asarray(self.stage_angles, dtype=float))
        self.principal_point = (float(self.principal_point[0]), float(self.principal_point[1]))
        if not (self.sdd > self.sod > 0.0):
            raise ValueError(f"need sdd > sod > 0, got sdd={self.sdd}, sod={self.sod}")
        if self.pixel_pitch <= 0.0:
            raise ValueError("pixel_pitch must be positive")
        if self.stage_angles.size < 1:
            raise ValueError("need at least one stage angle")
        if self.det_cols < 1 or self.det_rows < 1:
            raise ValueError("detector must have at least one pixel")

    @property
    def n_proj(self) -> int:
        return int(self.stage_angles.size)

    @property
    def magnification(self) -> float:
        return self.sdd / self.sod

    def to_dict(self) -> dict:
        return {
            "sdd_mm": self.sdd,
            "sod_mm": self.sod,
            "det_cols": self.det_cols,
            "det_rows": self.det_rows,
            "pixel_pitch_mm": self.pixel_pitch,
            "principal_point_px": list(self.principal_point),
            "stage_angles_rad": [float(a) for a in self.stage_angles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanGeometry":
        return cls(
            sdd=float(d["sdd_mm"]),
            sod=float(d["sod_mm"]),
            det_cols=int(d["det_cols"]),
            det_rows=int(d["det_rows"]),
            pixel_pitch=float(d["pixel_pitch_mm"]),
            principal_point=tuple(d["principal_point_px"]),
            stage_angles=np.asarray(d["stage_angles_rad"], dtype=float),
        )


class DetectorPoint(NamedTuple):
    """Continuous detector coordinates in pixels; may lie off the frame."""

    u: float
    v: float


def make_circular_trajectory(n_proj: int, last_angle: float) -> np.ndarray:
    """Equally spaced stage angles from 0 to last_angle inclusive.

    A single projection sits at angle 0.  For a full circle without a
    duplicated first/last view, pass last_angle = 2*pi*(n-1)/n.
    """
    if n_proj < 1:
        raise ValueError("n_proj must be >= 1")
    if n_proj == 1:
        return np.zeros(1)
    return np.linspace(0.0, last_angle, n_proj)


def project_points(geom: ScanGeometry, i: int, x) -> np.ndarray:
    """Project one or more world points in view i; returns (..., 2) of (u, v)."""
    x = np.asarray(x, dtype=float)
    phi = geom.stage_angles[i]
    xi = x @ rot_z(phi).T
    depth = geom.sod + xi[..., 1]
    if np.any(depth <= DEGENERATE_DEPTH_FRACTION * geom.sod):
        raise DegenerateRay(f"point at or behind the source plane in view {i}")
    scale = geom.sdd / (depth * geom.pixel_pitch)
    u = geom.principal_point[0] + xi[..., 0] * scale
    v = geom.principal_point[1] + xi[..., 2] * scale
    return np.stack([u, v], axis=-1)


def project_point(geom: ScanGeometry, i: int, x) -> DetectorPoint:
    """Project a single world point onto the detector in view i."""
    uv = project_points(geom, i, np.asarray(x, dtype=float).reshape(3))
    return DetectorPoint(float(uv[0]), float(uv[1]))


def project_point_jacobian(geom: ScanGeometry, i: int, x) -> np.ndarray:
    """Analytic 2x3 Jacobian d(u, v)/d(x, y, z) of :func:`project_point`.

    Includes the stage rotation via the chain rule: the perspective
    Jacobian evaluated at the rotated point is right-multiplied by
    Rz(phi_i).
    """
    x = np.asarray(x, dtype=float).reshape(3)
    phi = geom.stage_angles[i]
    rz = rot_z(phi)
    xi = rz @ x
    depth = geom.sod + xi[1]
    if depth <= DEGENERATE_DEPTH_FRACTION * geom.sod:
        raise DegenerateRay(f"point at or behind the source plane in view {i}")
    f = geom.sdd / (depth * geom.pixel_pitch)
    jac_persp = np.array(
        [
            [f, -xi[0] * f / depth, 0.0],
            [0.0, -xi[2] * f / depth, f],
        ]
    )
    return jac_persp @ rz


def view_basis(geom: ScanGeometry, i: int):
    """World-frame ray-casting basis of view i.

    Returns (source, det_origin, du, dv): the source position, the world
    position of the center of pixel (row 0, col 0), and the world steps
    per detector column / row.  Equivalent to rotating the stage-frame
    apparatus by -phi_i.
    """
    phi = geom.stage_angles[i]
    rz = rot_z(-phi)
    u0, v0 = geom.principal_point
    p = geom.pixel_pitch
    source = rz @ np.array([0.0, -geom.sod, 0.0])
    det_origin = rz @ np.array([-u0 * p, geom.sdd - geom.sod, -v0 * p])
    du = rz @ np.array([p, 0.0, 0.0])
    dv = rz @ np.array([0.0, 0.0, p])
    return source, det_origin, du, dv


def detector_point_world(geom: ScanGeometry, i: int, point: DetectorPoint) -> np.ndarray:
    """World position of a continuous detector coordinate in view i."""
    source, det_origin, du, dv = view_basis(geom, i)
    return det_origin + point.u * du + point.v * dv


def table1_geometry(
    det_cols: int = 1944,
    det_rows: int = 1536,
    pixel_pitch: float = 0.748,
    n_proj: int = 21,
    last_angle: float = math.radians(200.0),
    sdd: float = 791.0,
    sod: float = 679.0,
    principal_point: tuple | None = None,
) -> ScanGeometry:
    """Batch-scan geometry preset (791/679 mm, 21 views over 200 degrees).

    Defaults reproduce the published in-line inspection setup; every
    parameter can be overridden, e.g. for desk-scale detectors.
    """
    if principal_point is None:
        principal_point = ((det_cols - 1) / 2.0, (det_rows - 1) / 2.0)
    return ScanGeometry(
        sdd=sdd,
        sod=sod,
        det_cols=det_cols,
        det_rows=det_rows,
        pixel_pitch=pixel_pitch,
        principal_point=principal_point,
        stage_angles=make_circular_trajectory(n_proj, last_angle),
    )
