import unittest

import numpy as np
from scipy.integrate import quad

from precodelab.channel_sim import (
    ArrayGeometry,
    SiteProfile,
    augment_permutations,
    draw_channel,
    draw_users,
    noise_for_snr,
    permute_users,
    steering_vector,
    steering_vectors,
)
from precodelab.check_inputs import ConfigurationError
from precodelab.precoding import SystemConfig


class TestArrayGeometry(unittest.TestCase):
    def test_square_factorisation(self):
        self.assertEqual(ArrayGeometry.for_antennas(64), ArrayGeometry(8, 8))
        self.assertEqual(ArrayGeometry.for_antennas(16), ArrayGeometry(4, 4))
        geom = ArrayGeometry.for_antennas(12)
        self.assertEqual((geom.rows, geom.cols), (3, 4))

    def test_rejects_bad_sizes(self):
        with self.assertRaises(ConfigurationError):
            ArrayGeometry(0, 4)


class TestSteeringVector(unittest.TestCase):
    def test_unit_norm(self):
        geom = ArrayGeometry(8, 8)
        for az, el in [(0.0, 0.0), (0.3, -0.2), (1.2, 0.5)]:
            self.assertAlmostEqual(np.linalg.norm(steering_vector(geom, az, el)), 1.0, places=12)

    def test_broadside_is_flat(self):
        a = steering_vector(ArrayGeometry(4, 4), 0.0, 0.0)
        np.testing.assert_allclose(a, np.full(16, 0.25))

    def test_element_phase(self):
        geom = ArrayGeometry(2, 3, spacing=0.5)
        az, el = 0.4, 0.1
        a = steering_vector(geom, az, el)
        # element (m, n) = (1, 2) sits at row-major position 1 * 3 + 2
        phase = 2 * np.pi * 0.5 * (1 * np.sin(az) * np.cos(el) + 2 * np.sin(el))
        self.assertAlmostEqual(a[5], np.exp(1j * phase) / np.sqrt(6), places=12)

    def test_batched_matches_single(self):
        geom = ArrayGeometry(4, 2)
        A = steering_vectors(geom, [0.1, -0.5], [0.0, 0.2])
        np.testing.assert_allclose(A[:, 1], steering_vector(geom, -0.5, 0.2))

    def test_rejects_non_finite_angles(self):
        with self.assertRaises(ConfigurationError):
            steering_vector(ArrayGeometry(2, 2), np.nan, 0.0)


class TestSiteProfile(unittest.TestCase):
    def test_rejects_bad_los_probability(self):
        with self.assertRaises(ConfigurationError):
            SiteProfile("x", los_probability=1.5)

    def test_rejects_bad_path_range(self):
        with self.assertRaises(ConfigurationError):
            SiteProfile("x", path_count_range=(4, 2))

    def test_rician_shares(self):
        self.assertEqual(SiteProfile("x", rician_k_db=float("inf")).rician_shares(), (1.0, 0.0))
        los, scattered = SiteProfile("x", rician_k_db=0.0).rician_shares()
        self.assertAlmostEqual(los, 0.5)
        self.assertAlmostEqual(scattered, 0.5)

    def test_grid_size(self):
        profile = SiteProfile("x")
        self.assertEqual((profile.n_rings, profile.n_angles), (6, 36))


class TestDrawUsers(unittest.TestCase):
    def test_users_inside_ring(self):
        profile = SiteProfile("x")
        rng = np.random.default_rng(0)
        for _ in range(100):
            distance, azimuth = draw_users(profile, 4, rng)
            self.assertTrue(np.all((distance >= 50.0) & (distance <= 350.0)))
            self.assertTrue(np.all((azimuth >= -np.pi) & (azimuth <= np.pi)))

    def test_too_many_users(self):
        profile = SiteProfile("x", user_ring=(50.0, 100.0, 180.0))
        with self.assertRaises(ConfigurationError):
            draw_users(profile, 3, np.random.default_rng(0))


class TestDrawChannel(unittest.TestCase):
    def test_shape_and_sample(self):
        config = SystemConfig(16, 2)
        sample = draw_channel(SiteProfile("x"), config, np.random.default_rng(1), return_type="sample")
        self.assertEqual(sample["H"].shape, (16, 2))
        self.assertEqual(sample["los"].shape, (2,))
        self.assertEqual(sample["distance"].shape, (2,))

    def test_deterministic_in_rng_state(self):
        config = SystemConfig(16, 2)
        a = draw_channel(SiteProfile("x"), config, np.random.default_rng(5))
        b = draw_channel(SiteProfile("x"), config, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_geometry_must_match(self):
        with self.assertRaises(ConfigurationError):
            draw_channel(SiteProfile("x"), SystemConfig(16, 2), np.random.default_rng(0), geom=ArrayGeometry(2, 2))

    def test_bad_return_type(self):
        with self.assertRaises(ConfigurationError):
            draw_channel(SiteProfile("x"), SystemConfig(4, 2), np.random.default_rng(0), return_type="frame")

    def test_pure_line_of_sight_column(self):
        profile = SiteProfile("x", los_probability=1.0, rician_k_db=float("inf"), pathloss_exponent=2.0)
        geom = ArrayGeometry(4, 4)
        sample = draw_channel(profile, SystemConfig(16, 1), np.random.default_rng(2), return_type="sample")
        d, az = sample["distance"][0], sample["azimuth"][0]
        a = steering_vector(geom, az, -np.arctan2(profile.bs_height_m, d))
        h = sample["H"][:, 0]
        # a LOS-only column is a phase-rotated steering vector scaled by the path-loss amplitude
        self.assertAlmostEqual(np.linalg.norm(h) ** 2, (d / 50.0) ** -2, places=10)
        self.assertAlmostEqual(abs(np.vdot(a, h)) / np.linalg.norm(h), 1.0, places=10)

    def test_mean_entry_power_matches_expectation(self):
        profile = SiteProfile("x", los_probability=1.0, rician_k_db=30.0, pathloss_exponent=2.0)
        config = SystemConfig(16, 4)
        rng = np.random.default_rng(3)
        powers = [np.mean(np.abs(draw_channel(profile, config, rng)) ** 2) for _ in range(4000)]
        low, high, _ = profile.user_ring
        expected_gain, _ = quad(lambda d: (d / low) ** -2.0 / (high - low), low, high)
        self.assertAlmostEqual(np.mean(powers) / (expected_gain / 16), 1.0, delta=0.05)


class TestNoiseAndPermutations(unittest.TestCase):
    def test_noise_for_snr(self):
        self.assertAlmostEqual(noise_for_snr(40, 1.0), 1e-4, places=15)
        self.assertAlmostEqual(noise_for_snr(0, 2.0), 2.0)
        self.assertAlmostEqual(noise_for_snr(-10, 1.0), 10.0)

    def test_permute_users(self):
        H = np.arange(6).reshape(3, 2).astype(complex)
        np.testing.assert_array_equal(permute_users(H, [1, 0]), H[:, ::-1])

    def test_permute_rejects_invalid(self):
        with self.assertRaises(ConfigurationError):
            permute_users(np.ones((3, 2)), [0, 0])

    def test_augment_layout(self):
        rng = np.random.default_rng(4)
        H = rng.standard_normal((5, 4, 3)) + 1j * rng.standard_normal((5, 4, 3))
        out = augment_permutations(H, 2, np.random.default_rng(0))
        self.assertEqual(out.shape, (15, 4, 3))
        np.testing.assert_array_equal(out[:5], H)
        for block in (1, 2):
            for i in range(5):
                copy = out[block * 5 + i]
                # every column of the copy is some column of the original sample
                matches = [[np.array_equal(copy[:, j], H[i][:, c]) for c in range(3)] for j in range(3)]
                self.assertTrue(all(any(row) for row in matches))

    def test_augment_zero_permutations(self):
        H = np.ones((2, 4, 2))
        np.testing.assert_array_equal(augment_permutations(H, 0, np.random.default_rng(0)), H)


if __name__ == '__main__':
    unittest.main()
