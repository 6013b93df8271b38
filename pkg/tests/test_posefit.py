import math
import warnings

import numpy as np
import pytest

from cyltomo import (ComponentSpec, CylGrid, CylVolume, DetectorPoint,
                     LmConfig, Pose, PoseFitParams, ProjectionSet,
                     RaySamplingConfig, ScanGeometry, axis_to_pose,
                     estimate_phase, euler_to_matrix, fit_pose,
                     forward_project_all, make_assembly_phantom,
                     make_circular_trajectory, project_point, track_point)
from cyltomo.errors import (DegenerateAxis, FlatSignal, IllPosed,
                            NoConvergenceWarning)
from cyltomo.geometry import wrap_angle
from cyltomo.imgproc import AxisObservation


@pytest.fixture
def table1_desk():
    return ScanGeometry(791.0, 679.0, 256, 128, 0.748, (127.5, 63.5),
                        make_circular_trajectory(21, math.radians(200.0)))


def observe(geom, x, views):
    return [(i, project_point(geom, i, x)) for i in views]


class TestTrackPoint:
    def test_noiseless_round_trip(self, table1_desk, rng):
        for _ in range(20):
            x = rng.uniform(-20, 20, size=3)
            obs = observe(table1_desk, x, range(0, 21, 4))
            tp = track_point(obs, table1_desk)
            assert np.abs(tp.solution - x).max() < 1e-6
            assert tp.residual_rms < 1e-9
            assert tp.converged

    def test_principal_point_observations_give_origin(self, table1_desk):
        u0, v0 = table1_desk.principal_point
        obs = [(i, DetectorPoint(u0, v0)) for i in range(21)]
        tp = track_point(obs, table1_desk)
        assert np.abs(tp.solution).max() < 1e-9

    def test_rms_not_worse_than_two_view_init(self, table1_desk, rng):
        x = rng.uniform(-15, 15, size=3)
        obs = observe(table1_desk, x, range(0, 21, 2))
        noisy = [(i, DetectorPoint(p.u + rng.normal(0, 0.3), p.v + rng.normal(0, 0.3)))
                 for i, p in obs]
        from cyltomo.posefit import _midpoint_init, _residuals_jacobian
        x0 = _midpoint_init(noisy, table1_desk)
        res0, _ = _residuals_jacobian(x0, noisy, table1_desk)
        tp = track_point(noisy, table1_desk)
        assert tp.residual_rms <= math.sqrt(res0 @ res0 / len(noisy)) + 1e-12

    def test_needs_two_distinct_views(self, table1_desk):
        pt = DetectorPoint(100.0, 60.0)
        with pytest.raises(IllPosed):
            track_point([(0, pt)], table1_desk)
        same = ScanGeometry(791.0, 679.0, 256, 128, 0.748, (127.5, 63.5),
                            np.zeros(4))
        with pytest.raises(IllPosed):
            track_point([(i, pt) for i in range(4)], same)

    def test_iteration_cap_returns_flagged_iterate(self, table1_desk, rng):
        x = rng.uniform(-15, 15, size=3)
        obs = observe(table1_desk, x, range(0, 21, 3))
        noisy = [(i, DetectorPoint(p.u + rng.normal(0, 1.0), p.v + rng.normal(0, 1.0)))
                 for i, p in obs]
        cfg = LmConfig(max_iterations=1, step_tolerance=1e-15, residual_tolerance=1e-30)
        with pytest.warns(NoConvergenceWarning):
            tp = track_point(noisy, table1_desk, cfg)
        assert not tp.converged
        assert np.isfinite(tp.solution).all()

    def test_noise_study_error_shrinks_with_views(self, table1_desk, rng):
        sigma = 0.2
        means = []
        for n_views in (3, 7, 21):
            views = np.linspace(0, 20, n_views).round().astype(int)
            errs = []
            for _ in range(100):
                x = rng.uniform(-15, 15, size=3)
                obs = [(int(i), project_point(table1_desk, int(i), x)) for i in views]
                noisy = [(i, DetectorPoint(p.u + rng.normal(0, sigma),
                                           p.v + rng.normal(0, sigma)))
                         for i, p in obs]
                tp = track_point(noisy, table1_desk)
                errs.append(np.linalg.norm(tp.solution - x))
            means.append(np.mean(errs))
        assert means[0] > means[1] > means[2]


class TestAxisToPose:
    def test_up_axis(self):
        pose = axis_to_pose([0.0, 0.0, 1.0], [0.0, 0.0, -1.0])
        assert (pose.alpha, pose.beta, pose.gamma) == (0.0, 0.0, 0.0)
        assert np.allclose(pose.t, 0.0)

    def test_down_axis(self):
        pose = axis_to_pose([0.0, 0.0, -1.0], [0.0, 0.0, 1.0])
        assert pose.beta == pytest.approx(math.pi)

    def test_postcondition_random_directions(self, rng):
        for _ in range(200):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            pose = axis_to_pose(5.0 * d, -5.0 * d)
            assert np.abs(euler_to_matrix(pose) @ [0, 0, 1] - d).max() < 1e-12

    def test_round_trip_from_pose(self, rng):
        for _ in range(100):
            alpha = rng.uniform(-math.pi, math.pi)
            beta = rng.uniform(0.05, math.pi - 0.05)
            t = rng.uniform(-10, 10, size=3)
            src = Pose(alpha, beta, rng.uniform(-3, 3), t=t)
            r = euler_to_matrix(src)
            top = r @ [0, 0, 7.0] + t
            bottom = r @ [0, 0, -7.0] + t
            back = axis_to_pose(top, bottom)
            assert back.alpha == pytest.approx(alpha, abs=1e-9)
            assert back.beta == pytest.approx(beta, abs=1e-9)
            assert np.abs(back.t - t).max() < 1e-9

    def test_degenerate(self):
        with pytest.raises(DegenerateAxis):
            axis_to_pose([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])


def synthetic_phase_set(phi_p, n_views=24, mean=5.0, amp=1.0):
    """Projection set whose per-view strip signal is exactly a shifted cosine.

    Constant images make strip_profile return the image value, so the
    phase pipeline sees s_i = mean + amp*cos(zeta_i - phi_p) with no
    segmentation noise at all.
    """
    geom = ScanGeometry(791.0, 679.0, 16, 16, 1.0, (7.5, 7.5),
                        make_circular_trajectory(n_views, 2 * math.pi * (n_views - 1) / n_views))
    zeta = geom.stage_angles[0] - geom.stage_angles
    values = mean + amp * np.cos(zeta - phi_p)
    images = np.broadcast_to(values[:, None, None], (n_views, 16, 16)).copy()
    axes = [AxisObservation(DetectorPoint(7.5, 2.0), DetectorPoint(7.5, 13.0), i)
            for i in range(n_views)]
    return ProjectionSet(geom, images), axes


class TestEstimatePhase:
    def test_reduces_to_phase_difference_when_untilted(self):
        for phi_p in (0.3, -2.0, 3.0):
            ps, axes = synthetic_phase_set(phi_p)
            gamma = estimate_phase(ps, axes, Pose(), strip_offset=0.0)
            assert gamma == pytest.approx(wrap_angle(phi_p - ps.geom.stage_angles[0]),
                                          abs=1e-9)

    def test_tilt_correction_term(self):
        ps, axes = synthetic_phase_set(0.8)
        pose = Pose(alpha=0.3, beta=0.4, gamma=0.0)
        gamma = estimate_phase(ps, axes, pose, strip_offset=0.0)
        expected = wrap_angle(0.8 - math.atan(math.tan(0.3) / math.cos(0.4)))
        assert gamma == pytest.approx(expected, abs=1e-9)

    def test_equivariant_under_phase_shift(self):
        base, axes = synthetic_phase_set(0.5)
        g0 = estimate_phase(base, axes, Pose(), strip_offset=0.0)
        for delta in (0.7, 2.5, -1.2):
            ps, axes2 = synthetic_phase_set(0.5 + delta)
            g1 = estimate_phase(ps, axes2, Pose(), strip_offset=0.0)
            assert wrap_angle(g1 - g0 - delta) == pytest.approx(0.0, abs=1e-9)

    def test_flat_signal_raises(self):
        ps, axes = synthetic_phase_set(0.0, amp=0.0)
        with pytest.raises(FlatSignal):
            estimate_phase(ps, axes, Pose(), strip_offset=0.0)


@pytest.fixture(scope="module")
def desk_pose_geometry():
    return ScanGeometry(791.0, 679.0, 128, 256, 0.52, (63.5, 127.5),
                        make_circular_trajectory(21, math.radians(200.0)))


def device_phantom(pose, with_insert=False):
    grid = CylGrid(60, 96 if with_insert else 48, 32, radius=8.0, height=60.0,
                   pose=pose)
    comps = [ComponentSpec("body", mu=0.04),
             ComponentSpec("core", mu=1.0, r_range=(0.0, 1.5), h_range=(-28.0, 28.0))]
    if with_insert:
        comps.append(ComponentSpec("insert", mu=0.8, r_range=(4.0, 6.0),
                                   theta_range=(-0.35, 0.35), h_range=(-12.0, 12.0)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return make_assembly_phantom(comps, grid)


CORE_PARAMS = PoseFitParams(threshold_level=1.8, threshold_levels=9,
                            threshold_span=1.0, band=1)


class TestFitPose:
    def test_identity_pose_recovered_exactly(self, desk_pose_geometry):
        vol = CylVolume.full(CylGrid(60, 48, 32, radius=8.0, height=60.0), 0.04)
        ps = forward_project_all(vol, desk_pose_geometry,
                                 RaySamplingConfig(supersample=2))
        pmax = ps.images.max()
        params = PoseFitParams(threshold_level=0.2 * pmax, threshold_levels=9,
                               threshold_span=0.15 * pmax, band=2)
        pose = fit_pose(ps, params).pose
        assert np.linalg.norm(pose.t) < 0.05
        d = euler_to_matrix(pose) @ [0, 0, 1]
        assert math.degrees(math.acos(min(1.0, abs(d[2])))) < 0.05

    def test_tilted_cylinder_beta_recovered(self, desk_pose_geometry):
        true = Pose(alpha=0.6, beta=math.radians(5.0), t=[2.0, -3.0, 1.0])
        ps = forward_project_all(device_phantom(true), desk_pose_geometry,
                                 RaySamplingConfig(supersample=2))
        res = fit_pose(ps, CORE_PARAMS)
        assert math.degrees(abs(res.pose.beta - true.beta)) < 0.1
        assert res.top.converged and res.bottom.converged

    def test_pose_result_document(self, desk_pose_geometry):
        true = Pose(alpha=0.6, beta=math.radians(5.0), t=[2.0, -3.0, 1.0])
        ps = forward_project_all(device_phantom(true), desk_pose_geometry,
                                 RaySamplingConfig(supersample=2))
        doc = fit_pose(ps, CORE_PARAMS).to_dict()
        for key in ("alpha_rad", "beta_deg", "t_mm", "residual_rms_px", "converged"):
            assert key in doc

    def test_azimuthally_symmetric_object_has_no_phase(self, desk_pose_geometry):
        true = Pose(alpha=0.2, beta=math.radians(2.0))
        ps = forward_project_all(device_phantom(true), desk_pose_geometry,
                                 RaySamplingConfig(supersample=2))
        params = PoseFitParams(threshold_level=1.8, threshold_levels=9,
                               threshold_span=1.0, band=1, estimate_gamma=True,
                               strip_offset=14.0, strip_width=8.0)
        with pytest.raises(FlatSignal):
            fit_pose(ps, params)
