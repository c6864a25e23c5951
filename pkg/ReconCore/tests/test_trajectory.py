from fractions import Fraction

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from ReconCore.trajectory import (
    GOLDEN_ANGLE_DEG, Trajectory, acceleration_factor, cartesian_grid, golden_angle_radial,
    spoke_angles, spokes_for_af,
)


class GoldenAngleRadialTests(SimpleTestCase):

    def test_single_spoke_lies_on_x_axis(self):
        traj = golden_angle_radial(1, 3)
        assert_allclose(traj.kxy, [[-np.pi, 0.0], [0.0, 0.0], [np.pi, 0.0]], atol=0)

    def test_second_spoke_is_rotated_by_small_golden_angle(self):
        traj = golden_angle_radial(2, 2)
        end = traj.points[1, -1]
        self.assertAlmostEqual(np.arctan2(end[1], end[0]), np.deg2rad(68.25), places=12)
        self.assertAlmostEqual(np.deg2rad(GOLDEN_ANGLE_DEG), 1.1911872, places=6)

    def test_first_point_of_every_spoke_has_radius_pi(self):
        traj = golden_angle_radial(40, 64, start_index=3)
        assert_allclose(np.linalg.norm(traj.points[:, 0], axis=-1), np.pi, rtol=1e-12)

    def test_sample_count_and_bounds(self):
        traj = golden_angle_radial(24, 64)
        self.assertEqual(traj.n_samples, 24 * 64)
        self.assertEqual(traj.kxy.shape, (24 * 64, 2))
        self.assertTrue(np.all(np.abs(traj.points) <= np.pi * (1 + 1e-12)))

    def test_radius_strictly_increasing_along_spoke(self):
        traj = golden_angle_radial(5, 17)
        self.assertTrue(np.all(np.diff(traj.radius(), axis=1) > 0))
        projected = np.einsum('spk,sk->sp', traj.points, traj.points[:, -1] / np.pi)
        self.assertTrue(np.all(np.diff(projected, axis=1) > 0))

    def test_deterministic(self):
        assert_array_equal(golden_angle_radial(13, 32, 2).points, golden_angle_radial(13, 32, 2).points)

    def test_angle_wrap_gives_same_points(self):
        theta = spoke_angles(50)
        wrapped = np.mod(theta, 2 * np.pi)
        assert_allclose(np.cos(theta), np.cos(wrapped), atol=1e-12)
        assert_allclose(np.sin(theta), np.sin(wrapped), atol=1e-12)

    def test_rejects_degenerate_spokes(self):
        with self.assertRaises(ValueError):
            golden_angle_radial(4, 1)
        with self.assertRaises(ValueError):
            golden_angle_radial(0, 8)
        with self.assertRaises(ValueError):
            golden_angle_radial(4, 8, start_index=-1)

    def test_trajectory_validates_shape_and_range(self):
        with self.assertRaises(ValueError):
            Trajectory(np.zeros((2, 3, 2)), 2, 4)
        with self.assertRaises(ValueError):
            Trajectory(np.full((1, 2, 2), 4.0), 1, 2)

    def test_points_are_read_only(self):
        traj = golden_angle_radial(2, 4)
        with self.assertRaises(ValueError):
            traj.points[0, 0, 0] = 1.0


class CartesianGridTests(SimpleTestCase):

    def test_grid_shape_and_kind(self):
        traj = cartesian_grid(8)
        self.assertEqual(traj.kind, 'cartesian')
        self.assertEqual(traj.points.shape, (8, 8, 2))
        self.assertAlmostEqual(traj.points[0, 0, 0], -np.pi)
        self.assertAlmostEqual(traj.points[4, 4, 1], 0.0)

    def test_odd_side_rejected(self):
        with self.assertRaises(ValueError):
            cartesian_grid(7)


class AccelerationFactorTests(SimpleTestCase):

    def test_reference_grid(self):
        table = {12: 16, 16: 12, 24: 8, 32: 6, 48: 4, 64: 3}
        for n_spokes, af in table.items():
            self.assertEqual(acceleration_factor(192, n_spokes), af)

    def test_exact_fraction(self):
        self.assertEqual(acceleration_factor(64, 64), 1)
        self.assertEqual(acceleration_factor(64, 24), Fraction(8, 3))

    def test_zero_spokes_rejected(self):
        with self.assertRaises(ValueError):
            acceleration_factor(64, 0)

    def test_spokes_for_af(self):
        self.assertEqual(spokes_for_af(192, 8), 24)
        self.assertEqual(spokes_for_af(16, 100), 1)
