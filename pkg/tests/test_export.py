import os
import shutil
import unittest
import warnings
from contextlib import redirect_stdout
from io import StringIO

import pandas as pd
import toml

from precodelab import export
from precodelab.check_inputs import ConfigurationError, PrecodingWarning
from precodelab.complexity import complexity_report


class TestExport(unittest.TestCase):

    def setUp(self):
        # Create a temporary directory for test files
        self.test_dir = 'test_files_export'
        os.makedirs(self.test_dir, exist_ok=True)
        self.results = pd.DataFrame({"method": ["ZF", "WMMSE"], "site": ["ericsson", "ericsson"],
                                     "snr_db": [20.0, 20.0], "mean_rate": [9.5, 11.25], "std": [1.0, 0.5],
                                     "n": [10, 10]})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PrecodingWarning)
            self.report = complexity_report()

    def tearDown(self):
        # Remove the temporary directory and its contents
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_generate_csv(self):
        file_path = os.path.join(self.test_dir, "results")
        written = export(self.results, file_format='csv', path=file_path, timestamp=False, verbose=False)
        # Check if the file was created
        self.assertEqual(written, file_path + '.csv')
        self.assertTrue(os.path.exists(written))
        # Check that the index was not written
        self.assertTrue(pd.read_csv(written).equals(self.results))

    def test_generate_csv_from_report(self):
        file_path = os.path.join(self.test_dir, "complexity")
        written = export(self.report, file_format='csv', path=file_path, verbose=False)
        frame = pd.read_csv(written)
        self.assertEqual(list(frame["method"]), ["WMMSE", "ZF", "PaPP", "MAML-CNN"])

    def test_generate_toml(self):
        file_path = os.path.join(self.test_dir, "complexity")
        written = export(self.report, file_format='toml', path=file_path, verbose=False)
        self.assertTrue(written.endswith('.toml'))
        self.assertEqual(toml.load(written)["display"]["WMMSE"], "36.0 M")

    def test_generate_toml_from_dict(self):
        written = export({"run": {"seed": 3}}, file_format='toml', path=os.path.join(self.test_dir, "nested", "run"),
                         verbose=False)
        # Missing directories are created
        self.assertEqual(toml.load(written), {"run": {"seed": 3}})

    def test_timestamp_in_name(self):
        file_path = os.path.join(self.test_dir, "results")
        written = export(self.results, file_format='csv', path=file_path, timestamp=True, verbose=False)
        self.assertNotEqual(written, file_path + '.csv')
        self.assertTrue(os.path.basename(written).startswith("results "))
        self.assertTrue(os.path.exists(written))

    def test_verbose_message(self):
        file_path = os.path.join(self.test_dir, "results")
        buffer = StringIO()
        with redirect_stdout(buffer):
            export(self.results, file_format='csv', path=file_path)
        self.assertIn("Exporting to", buffer.getvalue())

    def test_invalid_format(self):
        with self.assertRaises(ConfigurationError):
            export(self.results, file_format='png', path=os.path.join(self.test_dir, "results"))

    def test_invalid_objects(self):
        with self.assertRaises(ConfigurationError):
            export([1, 2, 3], file_format='csv', path=os.path.join(self.test_dir, "results"), verbose=False)
        with self.assertRaises(ConfigurationError):
            export("text", file_format='toml', path=os.path.join(self.test_dir, "results"), verbose=False)


if __name__ == '__main__':
    unittest.main()
