"""Pose estimation from multi-view detector observations.

A tracked point is triangulated by Levenberg-Marquardt minimization of
the summed squared projection distances over all views, using the
analytic projection Jacobians.  Two tracked axis points fix five degrees
of freedom; the internal rotation gamma is recovered separately from the
azimuthal phase of grey-value fluctuations in a strip parallel to the
projected axis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateAxis, FlatSignal, IllPosed,
                     NoConvergenceWarning)
from .geometry import (DetectorPoint, Pose, ScanGeometry,
                       detector_point_world, project_points,
                       project_point_jacobian, view_basis, wrap_angle)
from .imgproc import AxisObservation, axis_endpoints, dilate, remove_features, \
    strip_profile, threshold
from .projector import ProjectionSet


@dataclass
class LmConfig:
    """Standard Marquardt damping schedule; defaults suit pixel-scale problems."""

    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    max_iterations: int = 100
    step_tolerance: float = 1e-10
    residual_tolerance: float = 1e-12

    def __post_init__(self):
        if min(self.damping_init, self.damping_up, self.damping_down,
               self.max_iterations, self.step_tolerance, self.residual_tolerance) <= 0:
            raise ValueError("all LM parameters must be positive")
        if not (self.damping_up > 1.0 > self.damping_down):
            raise ValueError("need damping_up > 1 > damping_down")


@dataclass
class TrackedPoint:
    """Triangulation result: world solution plus per-view RMS residual."""

    observations: list
    solution: np.ndarray
    residual_rms: float
    converged: bool = True


def _residuals_jacobian(x, observations, geom):
    res = np.zeros(2 * len(observations))
    jac = np.zeros((2 * len(observations), 3))
    for k, (i, pt) in enumerate(observations):
        uv = project_points(geom, i, x)
        res[2 * k] = pt.u - uv[0]
        res[2 * k + 1] = pt.v - uv[1]
        jac[2 * k:2 * k + 2] = -project_point_jacobian(geom, i, x)
    return res, jac


def _midpoint_init(observations, geom) -> np.ndarray:
    """Closest point between the back-rays of the two best-separated views.

    Separation is scored by |sin(delta phi)|: views a half-turn apart
    look along the same line and triangulate as badly as identical ones.
    """
    angles = np.array([geom.stage_angles[i] for i, _ in observations])
    sep = np.abs(np.sin(angles[:, None] - angles[None, :]))
    ia, ib = np.unravel_index(np.argmax(sep), sep.shape)
    if sep[ia, ib] < 1e-9:
        raise IllPosed("all observations share one view direction")
    rays = []
    for k in (ia, ib):
        i, pt = observations[k]
        src, *_ = view_basis(geom, i)
        d = detector_point_world(geom, i, pt) - src
        rays.append((src, d / np.linalg.norm(d)))
    (p1, d1), (p2, d2) = rays
    # closest points of two skew lines
    c = d1 @ d2
    denom = 1.0 - c * c
    if denom < 1e-12:
        raise IllPosed("back-rays are parallel")
    dp = p2 - p1
    t1 = (dp @ d1 - c * (dp @ d2)) / denom
    t2 = (c * (dp @ d1) - dp @ d2) / denom
    return 0.5 * ((p1 + t1 * d1) + (p2 + t2 * d2))


def track_point(observations, geom: ScanGeometry,
                cfg: LmConfig | None = None) -> TrackedPoint:
    """Triangulate a 3D point from (view index, DetectorPoint) pairs.

    Needs at least two observations with distinct view angles;
    initialization is the two-view midpoint triangulation, refinement is
    Levenberg-Marquardt on the summed squared projection distances.  If
    the iteration cap is hit, the best iterate is returned flagged
    (converged=False) and a NoConvergenceWarning is emitted.
    """
    observations = list(observations)
    if len(observations) < 2:
        raise IllPosed("need at least two observations")
    cfg = cfg or LmConfig()

    x = _midpoint_init(observations, geom)
    res, jac = _residuals_jacobian(x, observations, geom)
    cost = res @ res
    damping = cfg.damping_init
    converged = False
    for _ in range(cfg.max_iterations):
        grad = jac.T @ res
        hess = jac.T @ jac
        try:
            step = np.linalg.solve(hess + damping * np.eye(3), -grad)
        except np.linalg.LinAlgError as exc:
            raise IllPosed("normal equations are singular") from exc
        res_new, jac_new = _residuals_jacobian(x + step, observations, geom)
        cost_new = res_new @ res_new
        if cost_new < cost:
            x = x + step
            res, jac, cost = res_new, jac_new, cost_new
            damping *= cfg.damping_down
            if np.linalg.norm(step) < cfg.step_tolerance or cost < cfg.residual_tolerance:
                converged = True
                break
        else:
            damping *= cfg.damping_up
            if damping > 1e12:
                break
    if not converged:
        warnings.warn("LM hit the iteration cap; returning best iterate",
                      NoConvergenceWarning, stacklevel=2)
    rms = math.sqrt(cost / len(observations))
    return TrackedPoint(observations=observations, solution=x,
                        residual_rms=rms, converged=converged)


def axis_to_pose(p_top, p_bottom, eps: float = 1e-9) -> Pose:
    """Five-DOF pose from two points on the symmetry axis; gamma left 0.

    Returns alpha, beta such that R(alpha, beta, 0) maps z-hat onto the
    normalized direction p_top - p_bottom, and T at the segment midpoint.
    At beta = 0 or pi the tie is broken with alpha = 0.
    """
    p_top = np.asarray(p_top, dtype=float)
    p_bottom = np.asarray(p_bottom, dtype=float)
    d = p_top - p_bottom
    norm = np.linalg.norm(d)
    if norm <= eps:
        raise DegenerateAxis("axis points coincide")
    d /= norm
    beta = math.acos(max(-1.0, min(1.0, d[2])))
    if math.sin(beta) > 1e-12:
        alpha = math.atan2(d[0], -d[1])
    else:
        alpha = 0.0
    return Pose(alpha=alpha, beta=beta, gamma=0.0, t=0.5 * (p_top + p_bottom))


def estimate_phase(ps: ProjectionSet, axes, pose: Pose,
                   strip_offset: float, strip_width: float = 1.0,
                   flat_rel: float = 0.05) -> float:
    """Internal rotation gamma from the azimuthal phase of a strip signal.

    The strip mean parallel to the projected axis is evaluated per view
    and its fundamental harmonic is fitted over the scanner angle (the
    view axis angle relative to view 0, i.e. -(phi_i - phi_0)) by linear
    least squares.  The fitted phase, referenced back to the first view
    and corrected for the axis tilt via arctan(tan(alpha)/cos(beta)),
    gives gamma.  An azimuthally symmetric object yields no fundamental
    and raises FlatSignal.
    """
    phis = ps.geom.stage_angles
    signal = np.array([
        strip_profile(ps.images[i], axes[i], strip_offset, strip_width)
        for i in range(ps.geom.n_proj)
    ])
    zeta = phis[0] - phis
    design = np.column_stack([np.ones_like(zeta), np.cos(zeta), np.sin(zeta)])
    coeffs, *_ = np.linalg.lstsq(design, signal, rcond=None)
    c0, a, b = coeffs
    amplitude = math.hypot(a, b)
    spread = float(signal.max() - signal.min())
    scale = max(float(np.abs(signal).max()), 1e-300)
    # noise floor: amplitude a pure-noise signal of this residual level
    # would explain by chance, with a 4x safety factor
    resid = signal - design @ coeffs
    noise_amp = 4.0 * float(np.std(resid)) * math.sqrt(2.0 / max(signal.size, 3))
    if spread < 1e-9 * scale or amplitude < max(flat_rel * spread, noise_amp):
        raise FlatSignal("no usable fundamental in the strip signal")
    phi_p = math.atan2(b, a)
    tilt = math.atan2(math.tan(pose.alpha), math.cos(pose.beta))
    return wrap_angle(phi_p - phis[0] - tilt)


@dataclass
class PoseFitParams:
    """Segmentation and phase-recovery knobs for the full pipeline.

    threshold_levels > 1 extracts the corner observations at that many
    levels spread threshold_span around threshold_level and averages
    them: binary masks quantize the silhouette edges to whole pixels,
    and the ladder recovers the sub-pixel edge position the way a single
    level cannot.  Requires a numeric threshold_level.
    """

    threshold_level: object = "auto"
    threshold_levels: int = 1
    threshold_span: float = 0.0
    dilation_radius: int = 0
    band: int = 1
    nuisance_level: float | None = None
    nuisance_dilation: int = 2
    exclude_rects: tuple = ()
    estimate_gamma: bool = False
    strip_offset: float = 0.0
    strip_width: float = 1.0
    lm: LmConfig = field(default_factory=LmConfig)

    def levels(self):
        if self.threshold_levels <= 1 or self.threshold_span <= 0.0:
            return [self.threshold_level]
        base = float(self.threshold_level)
        offsets = np.linspace(-self.threshold_span, self.threshold_span,
                              self.threshold_levels)
        return list(base + offsets)


@dataclass
class PoseFitResult:
    pose: Pose
    top: TrackedPoint
    bottom: TrackedPoint
    axes: list
    gamma: float | None = None

    def to_dict(self) -> dict:
        d = self.pose.to_dict()
        d.update({
            "alpha_deg": math.degrees(self.pose.alpha),
            "beta_deg": math.degrees(self.pose.beta),
            "gamma_deg": math.degrees(self.pose.gamma),
            "residual_rms_px": {"top": self.top.residual_rms,
                                "bottom": self.bottom.residual_rms},
            "converged": bool(self.top.converged and self.bottom.converged),
            "gamma_estimated": self.gamma is not None,
        })
        return d


def fit_pose(ps: ProjectionSet, params: PoseFitParams | None = None) -> PoseFitResult:
    """Segment every view, triangulate both axis endpoints, assemble the pose.

    The axis direction of a symmetric cylinder is only defined up to
    sign; the upward representative (beta <= pi/2) is returned.  With
    estimate_gamma the internal rotation is recovered from the strip
    signal; otherwise gamma stays 0.
    """
    params = params or PoseFitParams()
    axes = []
    for i in range(ps.geom.n_proj):
        img = ps.images[i]
        tops = []
        bottoms = []
        for level in params.levels():
            mask = threshold(img, level)
            if params.dilation_radius > 0:
                mask = dilate(mask, params.dilation_radius)
            nuisance = []
            if params.nuisance_level is not None:
                nuisance.append(dilate(threshold(img, params.nuisance_level),
                                       params.nuisance_dilation))
            if nuisance or params.exclude_rects:
                mask = remove_features(mask, nuisance, params.exclude_rects)
            obs = axis_endpoints(mask, band=params.band, view=i)
            tops.append(obs.top)
            bottoms.append(obs.bottom)
        axes.append(AxisObservation(
            top=DetectorPoint(float(np.mean([p.u for p in tops])),
                              float(np.mean([p.v for p in tops]))),
            bottom=DetectorPoint(float(np.mean([p.u for p in bottoms])),
                                 float(np.mean([p.v for p in bottoms]))),
            view=i,
        ))

    top = track_point([(a.view, a.top) for a in axes], ps.geom, params.lm)
    bottom = track_point([(a.view, a.bottom) for a in axes], ps.geom, params.lm)
    p_a, p_b = top.solution, bottom.solution
    if p_a[2] < p_b[2]:
        p_a, p_b = p_b, p_a
    pose = axis_to_pose(p_a, p_b)

    gamma = None
    if params.estimate_gamma:
        gamma = estimate_phase(ps, axes, pose, params.strip_offset, params.strip_width)
        pose = Pose(pose.alpha, pose.beta, gamma, pose.t)
    return PoseFitResult(pose=pose, top=top, bottom=bottom, axes=axes, gamma=gamma)


def estimate_pose(ps: ProjectionSet, params: PoseFitParams | None = None) -> Pose:
    """End-to-end pose estimate; see :func:`fit_pose` for details."""
    return fit_pose(ps, params).pose
