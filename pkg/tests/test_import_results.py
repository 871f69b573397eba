import os
import shutil
import unittest

import numpy as np
import pandas as pd

from precodelab import compare_results, import_results
from precodelab.check_inputs import ConfigurationError, DatasetIOError


class TestImportResults(unittest.TestCase):
    def setUp(self):
        # Create temporary result tables for testing
        self.test_dir = 'test_files_import'
        for run, zf, wmmse in (("run_a", 8.0, 10.0), ("run_b", 9.0, 12.0)):
            os.makedirs(os.path.join(self.test_dir, run), exist_ok=True)
            content = ("method, site ,snr_db,mean_rate,std,n\n"
                       f"ZF,ericsson,20.0,{zf},1.0,10\n"
                       f"WMMSE,ericsson,20.0,{wmmse},0.5,10\n"
                       f"PaPP-FT,ericsson,20.0,{wmmse / 2},0.5,10\n"
                       f"ZF,ericsson,40.0,{zf},1.0,10\n")
            with open(os.path.join(self.test_dir, run, 'eval_results.csv'), 'w') as temp_file:
                temp_file.write(content)
        self.path_a = os.path.join(self.test_dir, 'run_a', 'eval_results.csv')
        self.path_b = os.path.join(self.test_dir, 'run_b', 'eval_results.csv')

    def tearDown(self):
        # Remove the temporary files after testing
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_import_valid_file(self):
        result_df = import_results(self.path_a)
        self.assertIsInstance(result_df, pd.DataFrame)
        self.assertEqual(result_df.shape, (4, 6))
        # Column names are stripped
        self.assertIn("site", result_df.columns)

    def test_import_nonexistent_file(self):
        with self.assertRaises(DatasetIOError):
            import_results(os.path.join(self.test_dir, 'nonexistent_file.csv'))

    def test_import_wrong_extension(self):
        with self.assertRaises(ConfigurationError):
            import_results(os.path.join(self.test_dir, 'results.toml'))

    def test_import_missing_columns(self):
        path = os.path.join(self.test_dir, 'partial.csv')
        pd.DataFrame({"method": ["ZF"], "mean_rate": [1.0]}).to_csv(path, index=False)
        with self.assertRaises(ConfigurationError):
            import_results(path)

    def test_compare_runs(self):
        merged = compare_results([self.path_a, self.path_b])
        self.assertEqual(list(merged.columns),
                         ["run", "method", "site", "snr_db", "mean_rate", "std", "n", "ratio_vs_wmmse"])
        self.assertEqual(sorted(set(merged["run"])), ["run_a", "run_b"])
        row = merged[(merged["run"] == "run_b") & (merged["method"] == "ZF") & (merged["snr_db"] == 20.0)]
        self.assertAlmostEqual(float(row["ratio_vs_wmmse"].iloc[0]), 0.75)
        row = merged[(merged["run"] == "run_a") & (merged["method"] == "PaPP-FT")]
        self.assertAlmostEqual(float(row["ratio_vs_wmmse"].iloc[0]), 0.5)
        # No WMMSE row at 40 dB
        self.assertTrue(np.isnan(merged[merged["snr_db"] == 40.0]["ratio_vs_wmmse"]).all())

    def test_compare_labels(self):
        merged = compare_results([self.path_a, self.path_a])
        self.assertEqual(sorted(set(merged["run"])), ["run_a#0", "run_a#1"])
        merged = compare_results([self.path_a, self.path_b], labels=["first", "second"])
        self.assertEqual(list(merged["run"].unique()), ["first", "second"])
        with self.assertRaises(ConfigurationError):
            compare_results([self.path_a], labels=["x", "y"])
        with self.assertRaises(ConfigurationError):
            compare_results([])


if __name__ == '__main__':
    unittest.main()
