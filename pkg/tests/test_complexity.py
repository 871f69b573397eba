import unittest
import warnings
from fractions import Fraction

import toml

from precodelab.check_inputs import ConfigurationError, PrecodingWarning
from precodelab.complexity import (
    ComplexityConfig,
    complexity_report,
    format_count,
    maml_cnn_mult_count,
    papp_mult_count,
    wmmse_mult_count,
    zf_mult_count,
)


class TestCounts(unittest.TestCase):
    def test_wmmse_reference_configuration(self):
        count = wmmse_mult_count(64, 4, 12.5)
        self.assertEqual(count, Fraction(108011600, 3))
        self.assertLess(abs(float(count) - 36.1e6) / 36.1e6, 0.01)
        self.assertEqual(format_count(count), "36.0 M")

    def test_wmmse_is_linear_in_iterations(self):
        self.assertEqual(wmmse_mult_count(64, 4, 25), 2 * wmmse_mult_count(64, 4, 12.5))
        self.assertEqual(wmmse_mult_count(16, 2, 3) * 4, wmmse_mult_count(16, 2, 12))

    def test_zf_reference_configuration(self):
        count = zf_mult_count(64, 4)
        self.assertEqual(count, Fraction(25088, 3))
        self.assertLess(abs(float(count) - 8.4e3) / 8.4e3, 0.01)
        self.assertEqual(format_count(count), "8.4 K")

    def test_papp_default_sizes(self):
        count = papp_mult_count(64, 4, 2, 32, 3, (64, 64, 512, 256, 256))
        self.assertEqual(count, 970752)
        self.assertLess(abs(float(count) - 1.05e6) / 1.05e6, 0.15)

    def test_maml_cnn_default_sizes(self):
        count = maml_cnn_mult_count(64, 4, 2, 32, 3)
        self.assertAlmostEqual(float(count), 3514538.6667, places=3)
        self.assertLess(abs(float(count) - 3.77e6) / 3.77e6, 0.15)

    def test_small_hand_computed_case(self):
        # N_T = 2, N_U = 1: 2/3*8 + 4 + 4*3 + 1 + 14/3 = 27 per iteration
        self.assertEqual(wmmse_mult_count(2, 1, 1), 4 * 27)
        self.assertEqual(zf_mult_count(2, 1), 16 + Fraction(8, 3))
        self.assertEqual(papp_mult_count(2, 1, 2, 1, 1, (1, 1, 1, 2, 2)), 4 + 2 + 1 + 1 + 2 + 2)

    def test_rejects_invalid_sizes(self):
        with self.assertRaises(ConfigurationError):
            wmmse_mult_count(0, 4, 12.5)
        with self.assertRaises(ConfigurationError):
            zf_mult_count(64, -1)
        with self.assertRaises(ConfigurationError):
            papp_mult_count(64, 4, 2, 32, 3, (64, 64, 512, 256))

    def test_format_count(self):
        self.assertEqual(format_count(999), "999.0")
        self.assertEqual(format_count(1500), "1.5 K")
        self.assertEqual(format_count(2.5e9), "2.5 G")


class TestComplexityReport(unittest.TestCase):
    def test_default_report(self):
        with self.assertWarns(PrecodingWarning):
            report = complexity_report()
        self.assertEqual(len(report.notes), 1)
        self.assertEqual(report.params["c_in"], 2)
        self.assertEqual(report.params["kernel"], 3)
        self.assertEqual(report.params["fc_sizes"], (64, 64, 512, 256, 256))
        self.assertGreater(float(report.ratios["WMMSE/ZF"]), 4300)
        self.assertLess(float(report.ratios["WMMSE/ZF"]), 4310)
        self.assertGreater(report.ratios["MAML-CNN/PaPP"], 1)

        frame = report.to_frame()
        self.assertEqual(list(frame["method"]), ["WMMSE", "ZF", "PaPP", "MAML-CNN"])
        self.assertEqual(list(frame.columns), ["method", "n_tx", "n_users", "params", "mult_count", "ratio_vs_wmmse"])
        self.assertEqual(frame.loc[0, "ratio_vs_wmmse"], 1.0)
        self.assertEqual(frame.loc[2, "mult_count"], 970752.0)

    def test_explicit_kernel_has_no_note(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", PrecodingWarning)
            report = complexity_report(ComplexityConfig(c_in=2, kernel=5))
        self.assertEqual(report.notes, [])
        self.assertEqual(report.params["kernel"], 5)

    def test_parameters_are_echoed(self):
        config = ComplexityConfig(n_tx=16, n_users=2, iterations=7, c_in=2, kernel=3, fc_sizes=(8, 8, 8, 32, 32))
        report = complexity_report(config)
        self.assertEqual(report.params["n_tx"], 16)
        self.assertEqual(report.params["iterations"], 7)
        self.assertEqual(report.counts["WMMSE"], wmmse_mult_count(16, 2, 7))

    def test_default_display_values(self):
        report = complexity_report(ComplexityConfig(), warn=False)
        self.assertEqual((format_count(report.counts["WMMSE"]), format_count(report.counts["ZF"])), ("36.0 M", "8.4 K"))

    def test_toml_document(self):
        report = complexity_report(warn=False)
        document = toml.loads(report.to_toml())
        self.assertEqual(document["display"]["WMMSE"], "36.0 M")
        self.assertEqual(document["counts_exact"]["ZF"], "25088/3")
        self.assertEqual(document["params"]["fc_sizes"], [64, 64, 512, 256, 256])
        self.assertEqual(len(document["notes"]), 1)


if __name__ == "__main__":
    unittest.main()
