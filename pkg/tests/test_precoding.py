import unittest

import numpy as np

from precodelab.check_inputs import ConfigurationError, DegenerateInputError, SingularChannelError
from precodelab.precoding import (
    SystemConfig,
    batch_sum_rate,
    mrt_precoder,
    project_power,
    sinr_per_user,
    sum_rate,
    total_power,
    zf_precoder,
)


def random_channel(rng, n_tx, n_users, batch=None):
    shape = (n_tx, n_users) if batch is None else (batch, n_tx, n_users)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


class TestSystemConfig(unittest.TestCase):
    def test_defaults(self):
        config = SystemConfig()
        self.assertEqual((config.n_tx, config.n_users, config.p_max), (64, 4, 1.0))

    def test_rejects_more_users_than_antennas(self):
        with self.assertRaises(ConfigurationError):
            SystemConfig(n_tx=2, n_users=4)

    def test_rejects_non_positive_power(self):
        with self.assertRaises(ConfigurationError):
            SystemConfig(p_max=0.0)


class TestSumRate(unittest.TestCase):
    def test_single_user_closed_form(self):
        rng = np.random.default_rng(1)
        h = random_channel(rng, 8, 1)
        w = h / np.linalg.norm(h)
        sigma2 = 0.1
        expected = np.log2(1.0 + np.linalg.norm(h) ** 2 / sigma2)
        self.assertAlmostEqual(sum_rate(h, w, sigma2), expected, places=10)

    def test_zero_precoder_gives_zero_rate(self):
        H = random_channel(np.random.default_rng(2), 4, 2)
        self.assertEqual(sum_rate(H, np.zeros((4, 2)), 1.0), 0.0)

    def test_sinr_by_hand(self):
        H = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=complex)
        W = np.array([[1.0, 0.5], [0.0, 1.0]], dtype=complex)
        # user 0: signal 1, interference |0.5|^2; user 1: signal 1, interference 0
        np.testing.assert_allclose(sinr_per_user(H, W, 1.0), [1.0 / 1.25, 1.0])

    def test_rejects_shape_mismatch(self):
        with self.assertRaises(ConfigurationError):
            sum_rate(np.ones((4, 2)), np.ones((4, 3)), 1.0)

    def test_rejects_non_positive_noise(self):
        with self.assertRaises(ConfigurationError):
            sum_rate(np.ones((4, 2)), np.ones((4, 2)), 0.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            H = random_channel(rng, 8, 4)
            W = random_channel(rng, 8, 4)
            perm = rng.permutation(4)
            base = sum_rate(H, W, 0.5)
            permuted = sum_rate(H[:, perm], W[:, perm], 0.5)
            self.assertLessEqual(abs(base - permuted), 1e-12 * max(1.0, base))

    def test_batch_matches_loop(self):
        rng = np.random.default_rng(4)
        H = random_channel(rng, 6, 3, batch=5)
        W = random_channel(rng, 6, 3, batch=5)
        rates = batch_sum_rate(H, W, 0.3)
        np.testing.assert_allclose(rates, [sum_rate(h, w, 0.3) for h, w in zip(H, W)], rtol=1e-12)

    def test_batch_requires_stack(self):
        with self.assertRaises(ConfigurationError):
            batch_sum_rate(np.ones((4, 2)), np.ones((4, 2)), 1.0)


class TestProjectPower(unittest.TestCase):
    def test_within_budget_unchanged(self):
        W = np.full((4, 2), 0.1, dtype=complex)
        np.testing.assert_array_equal(project_power(W, 1.0), W)

    def test_over_budget_scaled_to_budget(self):
        W = np.ones((4, 2), dtype=complex)
        self.assertAlmostEqual(float(total_power(project_power(W, 2.0))), 2.0, places=12)

    def test_strict_normalises_up(self):
        W = np.full((4, 2), 0.1, dtype=complex)
        self.assertAlmostEqual(float(total_power(project_power(W, 3.0, strict=True))), 3.0, places=12)

    def test_strict_zero_raises(self):
        with self.assertRaises(DegenerateInputError):
            project_power(np.zeros((4, 2)), 1.0, strict=True)

    def test_non_strict_zero_returns_zero(self):
        np.testing.assert_array_equal(project_power(np.zeros((4, 2)), 1.0), np.zeros((4, 2)))


class TestZeroForcing(unittest.TestCase):
    def test_interference_nulled(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            n_tx = int(rng.integers(4, 17))
            n_users = int(rng.integers(1, min(n_tx, 4) + 1))
            H = random_channel(rng, n_tx, n_users)
            W = zf_precoder(H, 1.0)
            G = np.abs(np.conj(H.T) @ W) ** 2
            off = G - np.diag(np.diag(G))
            self.assertLess(off.sum() / np.trace(G), 1e-10)

    def test_power_equals_budget(self):
        H = random_channel(np.random.default_rng(6), 8, 3)
        self.assertAlmostEqual(float(total_power(zf_precoder(H, 2.5))), 2.5, places=10)

    def test_identity_channel(self):
        W = zf_precoder(np.eye(4, 2), 2.0)
        np.testing.assert_allclose(W, np.eye(4, 2), atol=1e-12)

    def test_rank_deficient_raises(self):
        h = random_channel(np.random.default_rng(7), 4, 1)
        with self.assertRaises(SingularChannelError):
            zf_precoder(np.hstack([h, h]), 1.0)

    def test_stack(self):
        H = random_channel(np.random.default_rng(8), 6, 2, batch=3)
        W = zf_precoder(H, 1.0)
        np.testing.assert_allclose(W[1], zf_precoder(H[1], 1.0))


class TestMrt(unittest.TestCase):
    def test_power_and_direction(self):
        H = random_channel(np.random.default_rng(9), 6, 2)
        W = mrt_precoder(H, 1.5)
        self.assertAlmostEqual(float(total_power(W)), 1.5, places=12)
        np.testing.assert_allclose(W / np.sqrt(1.5 / np.sum(np.abs(H) ** 2)), H)

    def test_zero_channel_stays_zero(self):
        np.testing.assert_array_equal(mrt_precoder(np.zeros((4, 2)), 1.0), np.zeros((4, 2)))


if __name__ == '__main__':
    unittest.main()
