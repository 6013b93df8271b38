import math

import numpy as np
import pytest

from cyltomo import (CartGrid, CartVolume, CylCoord, CylGrid, CylVolume, Pose,
                     align_point, cart_to_cyl, cyl_to_cart, region_mask,
                     resample_cyl_to_cart, resample_cyl_to_cyl, sample,
                     world_to_grid)
from cyltomo.grid import grid_to_world

TWO_PI = 2 * math.pi


class TestCylindricalTransform:
    def test_on_x_axis(self):
        c = cart_to_cyl([1.0, 0.0, 5.0])
        assert (c.r, c.theta, c.h) == pytest.approx((1.0, 0.0, 5.0))

    def test_on_y_axis(self):
        c = cart_to_cyl([0.0, 1.0, 0.0])
        assert (c.r, c.theta, c.h) == pytest.approx((1.0, math.pi / 2, 0.0))

    def test_axis_degeneracy_convention(self):
        c = cart_to_cyl([0.0, 0.0, 3.0])
        assert (c.r, c.theta, c.h) == (0.0, 0.0, 3.0)

    def test_cyl_to_cart_half_turn(self):
        assert cyl_to_cart(CylCoord(1.0, math.pi, 2.0)) == pytest.approx([-1.0, 0.0, 2.0])

    def test_zero_radius_any_angle(self):
        for th in (0.0, 1.0, 4.0):
            assert np.allclose(cyl_to_cart(CylCoord(0.0, th, 0.0)), [0.0, 0.0, 0.0])

    def test_round_trip_random(self, rng):
        pts = rng.uniform(-10, 10, size=(1000, 3))
        pts = pts[np.hypot(pts[:, 0], pts[:, 1]) > 1e-6]
        back = cyl_to_cart(cart_to_cyl(pts))
        assert np.abs(back - pts).max() < 1e-12

    def test_theta_range(self, rng):
        c = cart_to_cyl(rng.uniform(-5, 5, size=(500, 3)))
        assert np.all((c.theta >= 0.0) & (c.theta < TWO_PI))


class TestWorldToGrid:
    def test_identity_pose_equals_cart_to_cyl(self, rng):
        grid = CylGrid(4, 8, 6, 2.0, 2.0)
        pts = rng.uniform(-3, 3, size=(50, 3))
        a = world_to_grid(grid, pts)
        b = cart_to_cyl(pts)
        assert np.allclose(a.r, b.r) and np.allclose(a.theta, b.theta) and np.allclose(a.h, b.h)

    def test_translated_pose(self):
        grid = CylGrid(4, 8, 6, 2.0, 2.0, pose=Pose(t=[0, 0, 1]))
        c = world_to_grid(grid, [1.0, 0.0, 1.0])
        assert (c.r, c.theta, c.h) == pytest.approx((1.0, 0.0, 0.0))

    def test_round_trip_through_pose(self, rng):
        for _ in range(50):
            pose = Pose(*rng.uniform(-3, 3, size=3), t=rng.uniform(-5, 5, size=3))
            grid = CylGrid(4, 8, 6, 2.0, 2.0, pose=pose)
            c = CylCoord(rng.uniform(0.1, 2.0), rng.uniform(0, TWO_PI), rng.uniform(-1, 1))
            x_world = align_point(pose, cyl_to_cart(c))
            back = world_to_grid(grid, x_world)
            assert abs(back.r - c.r) < 1e-10
            assert abs(back.h - c.h) < 1e-10
            assert abs(math.remainder(back.theta - c.theta, TWO_PI)) < 1e-10

    def test_grid_to_world_inverse(self, rng):
        pose = Pose(0.5, 1.0, -0.3, t=[2, -1, 4])
        grid = CylGrid(4, 8, 6, 2.0, 2.0, pose=pose)
        pts = rng.uniform(-3, 3, size=(20, 3))
        assert np.abs(grid_to_world(grid, world_to_grid(grid, pts)) - pts).max() < 1e-10


class TestSample:
    @pytest.fixture
    def vol(self, rng):
        grid = CylGrid(6, 12, 8, radius=4.0, height=3.0)
        return CylVolume(grid, rng.random(grid.shape))

    def test_constant_volume(self, vol, rng):
        const = CylVolume.full(vol.grid, 2.5)
        r = rng.uniform(0, 3.9, 200)
        th = rng.uniform(0, TWO_PI, 200)
        h = rng.uniform(-1.45, 1.45, 200)
        assert np.abs(sample(const, CylCoord(r, th, h)) - 2.5).max() == 0.0

    def test_exact_at_voxel_centers(self, vol):
        g = vol.grid
        hh, tt, rr = np.meshgrid(g.h_centers(), g.theta_centers(), g.r_centers(),
                                 indexing="ij")
        values = sample(vol, CylCoord(rr, tt, hh))
        assert np.array_equal(values, vol.mu)

    def test_theta_wraparound_interpolation(self, vol):
        g = vol.grid
        # theta = 0 lies half a voxel below the first center: the sample must
        # be the midpoint of the last and first azimuthal voxels
        r = g.r_centers()[3]
        h = g.h_centers()[2]
        expected = 0.5 * (vol.mu[2, -1, 3] + vol.mu[2, 0, 3])
        assert sample(vol, CylCoord(r, 0.0, h)) == pytest.approx(expected, abs=1e-14)
        assert sample(vol, CylCoord(r, 0.0, h)) == sample(vol, CylCoord(r, TWO_PI, h))

    def test_outside_support_is_zero(self, vol):
        assert sample(vol, CylCoord(4.001, 1.0, 0.0)) == 0.0
        assert sample(vol, CylCoord(1.0, 1.0, 1.51)) == 0.0
        assert sample(vol, CylCoord(1.0, 1.0, -1.51)) == 0.0

    def test_convexity_bound(self, vol, rng):
        g = vol.grid
        for _ in range(200):
            fr = rng.uniform(0, g.n_r - 1)
            ft = rng.uniform(0, g.n_theta - 1)
            fh = rng.uniform(0, g.n_h - 1)
            corners = vol.mu[
                np.ix_([int(fh), int(fh) + 1], [int(ft), int(ft) + 1],
                       [int(fr), int(fr) + 1])
            ]
            val = sample(vol, CylCoord((fr + 0.5) * g.d_r, (ft + 0.5) * g.d_theta,
                                       (fh + 0.5) * g.d_h - g.height / 2))
            assert corners.min() - 1e-12 <= val <= corners.max() + 1e-12

    def test_axis_clamps_to_innermost_ring(self, vol):
        g = vol.grid
        th = g.theta_centers()[5]
        h = g.h_centers()[1]
        assert sample(vol, CylCoord(0.0, th, h)) == pytest.approx(vol.mu[1, 5, 0])

    def test_nearest_mode(self, vol):
        g = vol.grid
        c = CylCoord(g.r_centers()[2] + 0.2 * g.d_r, g.theta_centers()[4],
                     g.h_centers()[3])
        assert sample(vol, c, mode="nearest") == vol.mu[3, 4, 2]

    def test_cart_volume_sampling(self, rng):
        grid = CartGrid.centered(5, 6, 7, 0.5)
        vol = CartVolume(grid, rng.random(grid.shape))
        centers = grid.voxel_centers()
        assert np.array_equal(sample(vol, centers), vol.mu)
        assert sample(vol, [10.0, 0.0, 0.0]) == 0.0


class TestResample:
    def test_constant_cylinder_to_cart(self):
        grid = CylGrid(8, 16, 8, radius=2.0, height=4.0)
        vol = CylVolume.full(grid, 1.5)
        target = CartGrid.centered(11, 11, 11, 0.45)
        out = resample_cyl_to_cart(vol, target)
        centers = target.voxel_centers()
        r = np.hypot(centers[..., 0], centers[..., 1])
        inside = (r < 1.9) & (np.abs(centers[..., 2]) < 1.9)
        outside = (r > 2.0 + 1e-9) | (np.abs(centers[..., 2]) > 2.0)
        assert np.allclose(out.mu[inside], 1.5)
        assert np.allclose(out.mu[outside], 0.0)

    def test_analytic_phantom_within_first_order_bound(self):
        # smooth radial field: trilinear resampling error is bounded by the
        # gradient times the cell diagonal
        grid = CylGrid(8, 64, 48, radius=3.0, height=4.0)
        rr = grid.r_centers()
        f = np.cos(2 * math.pi * rr / 3.0)
        vol = CylVolume(grid, np.broadcast_to(f, grid.shape).copy())
        target = CartGrid.centered(21, 21, 5, 0.22)
        out = resample_cyl_to_cart(vol, target)
        centers = target.voxel_centers()
        r = np.hypot(centers[..., 0], centers[..., 1])
        interior = (r > 3 * grid.d_r) & (r < 3.0 - 3 * grid.d_r)
        expected = np.cos(2 * math.pi * r / 3.0)
        grad_max = 2 * math.pi / 3.0
        bound = grad_max * (grid.d_r + grid.radius * grid.d_theta + grid.d_h)
        assert np.abs(out.mu[interior] - expected[interior]).max() <= bound

    def test_cyl_to_cyl_ignores_pose(self, rng):
        src_grid = CylGrid(6, 12, 8, 2.0, 3.0, pose=Pose(0.3, 0.2, 0.1, t=[1, 2, 3]))
        vol = CylVolume(src_grid, rng.random(src_grid.shape))
        target = CylGrid(6, 12, 8, 2.0, 3.0, pose=Pose(t=[-5, 0, 0]))
        out = resample_cyl_to_cyl(vol, target)
        assert np.array_equal(out.mu, vol.mu)
        assert out.grid is target


class TestRegionMask:
    def test_full_grid_when_unconstrained(self):
        grid = CylGrid(3, 4, 5, 1.0, 1.0)
        assert region_mask(grid).all()

    def test_theta_wrap(self):
        grid = CylGrid(1, 8, 1, 1.0, 1.0)
        m = region_mask(grid, theta_range=(7 * math.pi / 4, math.pi / 4))
        th = grid.theta_centers()
        expected = (th >= 7 * math.pi / 4) | (th <= math.pi / 4)
        assert np.array_equal(m[0, :, 0], expected)

    def test_ranges(self):
        grid = CylGrid(4, 4, 4, 2.0, 4.0)
        m = region_mask(grid, r_range=(0.0, 1.0), h_range=(0.0, 2.0))
        assert m.sum() == 2 * 4 * 2


class TestVolumeValidation:
    def test_shape_mismatch(self):
        grid = CylGrid(2, 3, 4, 1.0, 1.0)
        with pytest.raises(ValueError):
            CylVolume(grid, np.zeros((2, 3, 5)))

    def test_non_finite_rejected(self):
        grid = CylGrid(2, 3, 4, 1.0, 1.0)
        mu = np.zeros(grid.shape)
        mu[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            CylVolume(grid, mu)

    def test_counts_validated(self):
        with pytest.raises(ValueError):
            CylGrid(0, 3, 4, 1.0, 1.0)
        with pytest.raises(ValueError):
            CylGrid(1, 3, 4, -1.0, 1.0)
