import os
import shutil
import unittest

import numpy as np

from precodelab.check_inputs import ConfigurationError, DatasetIOError
from precodelab.parameters import ParameterSet, glorot_uniform, load_checkpoint, save_checkpoint, sgd_step


def sample_set(group="student", seed=0):
    rng = np.random.default_rng(seed)
    return ParameterSet(group,
                        {"fc1.weight": rng.standard_normal((3, 2)), "fc1.bias": rng.standard_normal(2),
                         "scale": 1.5},
                        {"fc1.running_mean": np.zeros(2), "fc1.running_var": np.ones(2)})


class TestParameterSet(unittest.TestCase):
    def test_snapshot_and_restore_are_exact(self):
        params = sample_set()
        saved = params.snapshot()
        before = params.checksum()
        params.params["fc1.weight"] += 1.0
        params.buffers["fc1.running_var"] *= 3.0
        self.assertNotEqual(params.checksum(), before)
        params.restore(saved)
        self.assertEqual(params.checksum(), before)

    def test_snapshot_is_a_copy(self):
        params = sample_set()
        saved = params.snapshot()
        params.params["fc1.bias"][0] = 99.0
        self.assertNotEqual(saved["fc1.bias"][0], 99.0)

    def test_restore_rejects_other_group_layout(self):
        params = sample_set()
        other = ParameterSet("student", {"fc2.weight": np.zeros((2, 2))})
        with self.assertRaises(ConfigurationError):
            params.restore(other)

    def test_size_and_names(self):
        params = sample_set()
        self.assertEqual(params.names, ["fc1.weight", "fc1.bias", "scale"])
        self.assertEqual(params.size(), 9)
        self.assertEqual(len(params), 3)
        self.assertIn("scale", params)

    def test_bind_gives_independent_leaves(self):
        params = sample_set()
        nodes = params.bind()
        self.assertTrue(all(node.requires_grad for node in nodes.values()))
        nodes["fc1.bias"].value[0] = 42.0
        self.assertNotEqual(params["fc1.bias"][0], 42.0)

    def test_buffer_updates_use_group_prefix(self):
        params = sample_set()
        updates = [("student.fc1", np.array([1.0, 2.0]), np.array([3.0, 5.0])),
                   ("teacher.fc1", np.array([100.0, 100.0]), np.array([100.0, 100.0]))]
        params.apply_buffer_updates(updates, momentum=0.9)
        np.testing.assert_allclose(params.buffers["fc1.running_mean"], [0.1, 0.2])
        np.testing.assert_allclose(params.buffers["fc1.running_var"], [1.2, 1.4])

    def test_checksum_depends_on_buffers(self):
        a, b = sample_set(), sample_set()
        self.assertEqual(a.checksum(), b.checksum())
        b.buffers["fc1.running_mean"][1] = 1e-12
        self.assertNotEqual(a.checksum(), b.checksum())


class TestSgdStep(unittest.TestCase):
    def test_step_values(self):
        params = sample_set()
        grads = {name: np.ones_like(value) for name, value in params.params.items()}
        updated = sgd_step(params, grads, 0.5)
        np.testing.assert_allclose(updated["fc1.weight"], params["fc1.weight"] - 0.5)
        self.assertEqual(float(updated["scale"]), 1.0)
        np.testing.assert_array_equal(updated.buffers["fc1.running_var"], params.buffers["fc1.running_var"])

    def test_zero_rate_is_identity(self):
        params = sample_set()
        grads = {name: np.full_like(value, 7.0) for name, value in params.params.items()}
        self.assertEqual(sgd_step(params, grads, 0.0).checksum(), params.checksum())

    def test_rejects_bad_rates(self):
        params = sample_set()
        grads = params.zeros()
        for lr in (-0.1, float("nan"), float("inf"), None):
            with self.assertRaises(ConfigurationError):
                sgd_step(params, grads, lr)

    def test_rejects_misaligned_gradients(self):
        params = sample_set()
        grads = params.zeros()
        del grads["scale"]
        with self.assertRaises(ConfigurationError):
            sgd_step(params, grads, 0.1)
        grads = params.zeros()
        grads["fc1.bias"] = np.zeros(3)
        with self.assertRaises(ConfigurationError):
            sgd_step(params, grads, 0.1)


class TestGlorot(unittest.TestCase):
    def test_bounds(self):
        values = glorot_uniform(np.random.default_rng(0), (200, 50), 200, 50)
        limit = np.sqrt(6.0 / 250.0)
        self.assertEqual(values.shape, (200, 50))
        self.assertLessEqual(np.max(np.abs(values)), limit)
        self.assertGreater(np.max(np.abs(values)), 0.9 * limit)


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.test_dir = "test_files_checkpoint"
        os.makedirs(self.test_dir, exist_ok=True)
        self.path = os.path.join(self.test_dir, "model.ckpt")

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_round_trip(self):
        groups = [sample_set("feature", 1), sample_set("student", 2)]
        checksum = save_checkpoint(self.path, groups, {"epoch": 3, "seed": 7})
        self.assertEqual(len(checksum), 64)

        loaded, metadata = load_checkpoint(self.path)
        self.assertEqual(list(loaded), ["feature", "student"])
        self.assertEqual(metadata, {"epoch": 3, "seed": 7})
        for original in groups:
            restored = loaded[original.group]
            self.assertEqual(restored.names, original.names)
            self.assertEqual(restored.checksum(), original.checksum())
        self.assertEqual(loaded["student"]["scale"].shape, ())

    def test_same_content_same_bytes(self):
        save_checkpoint(self.path, [sample_set()], {"epoch": 1})
        other = os.path.join(self.test_dir, "other.ckpt")
        save_checkpoint(other, [sample_set()], {"epoch": 1})
        with open(self.path, "rb") as a, open(other, "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_missing_file(self):
        with self.assertRaises(DatasetIOError):
            load_checkpoint(os.path.join(self.test_dir, "absent.ckpt"))

    def test_flipped_payload_byte(self):
        save_checkpoint(self.path, [sample_set()])
        with open(self.path, "rb") as handle:
            content = bytearray(handle.read())
        content[-3] ^= 0xFF
        with open(self.path, "wb") as handle:
            handle.write(bytes(content))
        with self.assertRaises(DatasetIOError):
            load_checkpoint(self.path)

    def test_truncated_file(self):
        save_checkpoint(self.path, [sample_set()])
        with open(self.path, "rb") as handle:
            content = handle.read()
        with open(self.path, "wb") as handle:
            handle.write(content[:-16])
        with self.assertRaises(DatasetIOError):
            load_checkpoint(self.path)

    def test_wrong_magic(self):
        with open(self.path, "wb") as handle:
            handle.write(b"not a checkpoint at all")
        with self.assertRaises(DatasetIOError):
            load_checkpoint(self.path)


if __name__ == "__main__":
    unittest.main()
