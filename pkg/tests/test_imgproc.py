import math

import numpy as np
import pytest

from cyltomo import (CylGrid, CylVolume, DetectorPoint, RaySamplingConfig,
                     ScanGeometry, axis_endpoints, dilate, forward_project,
                     otsu_level, remove_features, strip_profile, threshold)
from cyltomo.errors import (DegenerateHistogram, DegenerateMask, EmptyResult,
                            OutOfFrame)
from cyltomo.imgproc import AxisObservation


def rect_mask(shape, rows, cols):
    m = np.zeros(shape, dtype=bool)
    m[rows[0]:rows[1] + 1, cols[0]:cols[1] + 1] = True
    return m


class TestThreshold:
    def test_fixed_level_above_constant(self):
        img = np.full((8, 8), 3.0)
        assert not threshold(img, 5.0).any()

    def test_two_valued_auto_separates_at_gap(self):
        img = np.zeros((10, 10))
        img[3:7, 3:7] = 10.0
        mask = threshold(img, "auto")
        assert np.array_equal(mask, img == 10.0)

    def test_constant_image_degenerate_for_auto(self):
        with pytest.raises(DegenerateHistogram):
            threshold(np.full((5, 5), 1.0), "auto")

    def test_otsu_level_between_modes(self, rng):
        img = np.concatenate([rng.normal(1.0, 0.05, 500), rng.normal(4.0, 0.05, 500)])
        level = otsu_level(img.reshape(20, 50))
        assert 1.5 < level < 3.5

    def test_cylinder_silhouette_area(self):
        # oracle: analytic cone-beam silhouette area of an upright cylinder,
        # integrated row by row from the pinhole model written out directly
        sdd, sod, pitch = 791.0, 679.0, 0.45
        radius, height = 6.0, 30.0
        geom = ScanGeometry(sdd, sod, 96, 192, pitch, (47.5, 95.5), [0.0])
        grid = CylGrid(16, 24, 12, radius=radius, height=height)
        vol = CylVolume.full(grid, 0.05)
        img = forward_project(vol, geom, 0, RaySamplingConfig(supersample=2))
        mask = threshold(img, 0.02 * img.max())

        # limb tangents of the infinite cylinder: half-width on the detector
        u_half = sdd * math.tan(math.asin(radius / sod)) / pitch
        # cap rims: v(psi) of the rim circle at z = +-height/2
        psi = np.linspace(0, 2 * math.pi, 4001)
        v_scale = sdd / ((sod + radius * np.sin(psi)) * pitch)
        v_top = (-height / 2) * v_scale
        v_bot = (height / 2) * v_scale
        # area between the extreme rim projections, truncated to limb width
        u_rim = radius * np.cos(psi) * v_scale
        vs = np.linspace(v_top.min(), v_bot.max(), 2001)
        width = np.empty_like(vs)
        for k, v in enumerate(vs):
            if v_top.max() <= v <= v_bot.min():
                width[k] = 2 * u_half
            elif v < v_top.max():
                sel = v_top <= v
                width[k] = (u_rim[sel].max() - u_rim[sel].min()) if sel.any() else 0.0
            else:
                sel = v_bot >= v
                width[k] = (u_rim[sel].max() - u_rim[sel].min()) if sel.any() else 0.0
        area_expected = np.trapz(width, vs)
        assert mask.sum() == pytest.approx(area_expected, rel=0.05)


class TestDilate:
    def test_radius_zero_is_identity(self):
        m = rect_mask((9, 9), (2, 4), (3, 5))
        assert np.array_equal(dilate(m, 0), m)

    def test_single_pixel_becomes_block(self):
        m = np.zeros((7, 7), dtype=bool)
        m[3, 3] = True
        out = dilate(m, 1)
        assert out.sum() == 9
        assert out[2:5, 2:5].all()

    def test_extensive(self, rng):
        m = rng.random((20, 20)) > 0.8
        out = dilate(m, 2)
        assert (m <= out).all()

    def test_negative_radius_rejected(self):
        with pytest.raises(ValueError):
            dilate(np.zeros((3, 3), dtype=bool), -1)


class TestRemoveFeatures:
    def test_empty_nuisance_is_identity(self):
        m = rect_mask((9, 9), (2, 4), (3, 5))
        assert np.array_equal(remove_features(m), m)

    def test_full_frame_nuisance_empties(self):
        m = rect_mask((9, 9), (2, 4), (3, 5))
        with pytest.raises(EmptyResult):
            remove_features(m, [np.ones((9, 9), dtype=bool)])

    def test_exclusion_rectangle(self):
        m = rect_mask((10, 10), (0, 9), (4, 6))
        out = remove_features(m, exclude_rects=[(8, 10, 0, 10)])
        assert not out[8:].any()
        assert out[:8, 4:7].all()


class TestAxisEndpoints:
    def test_axis_aligned_rectangle(self):
        m = rect_mask((60, 40), (5, 50), (10, 20))
        obs = axis_endpoints(m)
        assert (obs.top.u, obs.top.v) == (15.0, 5.0)
        assert (obs.bottom.u, obs.bottom.v) == (15.0, 50.0)

    def test_rotated_rectangle_on_long_axis(self):
        # rasterize a 5 x 46 rectangle rotated 10 degrees; its band corners
        # must stay within 0.7 px of the analytic long symmetry axis
        angle = math.radians(10.0)
        center = np.array([30.0, 40.0])
        half_w, half_l = 2.5, 23.0
        yy, xx = np.mgrid[0:80, 0:60]
        du = (xx - center[0]) * math.cos(angle) + (yy - center[1]) * math.sin(angle)
        dv = -(xx - center[0]) * math.sin(angle) + (yy - center[1]) * math.cos(angle)
        mask = (np.abs(du) <= half_w) & (np.abs(dv) <= half_l)
        obs = axis_endpoints(mask, band=1)
        axis_dir = np.array([-math.sin(angle), math.cos(angle)])
        for pt in (obs.top, obs.bottom):
            rel = np.array([pt.u, pt.v]) - np.array([center[0], center[1]])
            perp = abs(rel[0] * axis_dir[1] - rel[1] * axis_dir[0])
            assert perp < 0.7

    def test_empty_and_flat_masks_rejected(self):
        with pytest.raises(DegenerateMask):
            axis_endpoints(np.zeros((5, 5), dtype=bool))
        flat = np.zeros((5, 5), dtype=bool)
        flat[2] = True
        with pytest.raises(DegenerateMask):
            axis_endpoints(flat)

    def test_mirror_equivariance(self, rng):
        m = rng.random((40, 30)) > 0.6
        m[0] = m[-1] = False
        m[:5] = False
        m[5, 10] = True
        m[30, 12] = True
        m[31:] = False
        obs = axis_endpoints(m)
        obs_m = axis_endpoints(m[:, ::-1])
        width = m.shape[1] - 1
        assert obs_m.top.u == pytest.approx(width - obs.top.u, abs=1e-9)
        assert obs_m.bottom.u == pytest.approx(width - obs.bottom.u, abs=1e-9)

    def test_swap_enforces_top_above_bottom(self):
        obs = AxisObservation(top=DetectorPoint(1.0, 9.0), bottom=DetectorPoint(2.0, 3.0))
        assert obs.top.v < obs.bottom.v


class TestStripProfile:
    def _axis(self):
        return AxisObservation(top=DetectorPoint(10.0, 2.0),
                               bottom=DetectorPoint(10.0, 17.0))

    def test_constant_image_any_offset(self):
        img = np.full((20, 20), 4.2)
        axis = self._axis()
        for off in (-3.0, 0.0, 5.0):
            assert strip_profile(img, axis, off) == pytest.approx(4.2)

    def test_centered_strip_is_maximal_on_cylinder(self):
        geom = ScanGeometry(791.0, 679.0, 64, 48, 0.748, (31.5, 23.5), [0.0])
        grid = CylGrid(8, 16, 12, radius=8.0, height=20.0)
        vol = CylVolume.full(grid, 0.05)
        img = forward_project(vol, geom, 0)
        axis = AxisObservation(top=DetectorPoint(31.5, 10.0),
                               bottom=DetectorPoint(31.5, 37.0))
        center = strip_profile(img, axis, 0.0)
        assert center > strip_profile(img, axis, 8.0)
        assert center > strip_profile(img, axis, -8.0)

    def test_asymmetric_feature_breaks_symmetry(self):
        img = np.zeros((20, 20))
        img[:, 13] = 2.0  # bright line right of the axis
        axis = self._axis()
        assert strip_profile(img, axis, 3.0) > strip_profile(img, axis, -3.0)

    def test_out_of_frame(self):
        img = np.zeros((20, 20))
        with pytest.raises(OutOfFrame):
            strip_profile(img, self._axis(), 100.0)
