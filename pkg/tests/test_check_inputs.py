import unittest
import warnings

import numpy as np

from precodelab.check_inputs import (
    ConfigurationError,
    DatasetIOError,
    DegenerateInputError,
    NumericFailureError,
    PrecodeLabError,
    PrecodingWarning,
    SingularChannelError,
    check_channel,
    check_permutation,
    check_positive,
    check_precoder,
    warn_precoding,
)


class TestErrorTaxonomy(unittest.TestCase):
    def test_errors_share_base_class(self):
        for error in (ConfigurationError, DegenerateInputError, SingularChannelError, NumericFailureError, DatasetIOError):
            self.assertTrue(issubclass(error, PrecodeLabError))

    def test_errors_keep_builtin_meaning(self):
        self.assertTrue(issubclass(ConfigurationError, ValueError))
        self.assertTrue(issubclass(SingularChannelError, ArithmeticError))
        self.assertTrue(issubclass(DatasetIOError, OSError))

    def test_warn_precoding_category(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            warn_precoding("degenerate")
        self.assertEqual(len(caught), 1)
        self.assertTrue(issubclass(caught[0].category, PrecodingWarning))


class TestCheckPositive(unittest.TestCase):
    def test_accepts_positive(self):
        self.assertEqual(check_positive(2, "x"), 2.0)

    def test_rejects_zero_unless_allowed(self):
        with self.assertRaises(ConfigurationError):
            check_positive(0.0, "x")
        self.assertEqual(check_positive(0.0, "x", allow_zero=True), 0.0)

    def test_rejects_nan_and_none(self):
        with self.assertRaises(ConfigurationError):
            check_positive(float("nan"), "x")
        with self.assertRaises(ConfigurationError):
            check_positive(None, "x")


class TestCheckChannel(unittest.TestCase):
    def test_returns_complex(self):
        H = check_channel(np.ones((4, 2)))
        self.assertEqual(H.dtype, np.complex128)

    def test_accepts_stack(self):
        self.assertEqual(check_channel(np.ones((3, 4, 2)), n_tx=4, n_users=2).shape, (3, 4, 2))

    def test_rejects_wrong_dimensions(self):
        with self.assertRaises(ConfigurationError):
            check_channel(np.ones((4, 2)), n_tx=8)
        with self.assertRaises(ConfigurationError):
            check_channel(np.ones((4, 2)), n_users=3)
        with self.assertRaises(ConfigurationError):
            check_channel(np.ones(4))

    def test_rejects_more_users_than_antennas(self):
        with self.assertRaises(ConfigurationError):
            check_channel(np.ones((2, 4)))

    def test_rejects_non_finite(self):
        H = np.ones((4, 2), dtype=complex)
        H[0, 0] = np.nan
        with self.assertRaises(ConfigurationError):
            check_channel(H)

    def test_precoder_shape_must_match(self):
        with self.assertRaises(ConfigurationError):
            check_precoder(np.ones((4, 2)), np.ones((4, 3)))


class TestCheckPermutation(unittest.TestCase):
    def test_valid(self):
        np.testing.assert_array_equal(check_permutation([2, 0, 1], 3), [2, 0, 1])

    def test_repeated_index(self):
        with self.assertRaises(ConfigurationError):
            check_permutation([0, 0, 1], 3)

    def test_wrong_length(self):
        with self.assertRaises(ConfigurationError):
            check_permutation([0, 1], 3)


if __name__ == '__main__':
    unittest.main()
