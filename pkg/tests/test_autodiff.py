import unittest

import numpy as np

from precodelab import autodiff as ad
from precodelab.autodiff import ComplexPair, Mode, backward, constant, numerical_gradient, variable
from precodelab.check_inputs import ConfigurationError, DegenerateInputError, NumericFailureError


def relative_error(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / scale


class GradientCheck(unittest.TestCase):
    """Compares reverse-mode gradients with central differences for every input array."""

    def assertGradients(self, build, *arrays, tol=1e-4):
        arrays = [np.ascontiguousarray(a, dtype=float) for a in arrays]
        leaves = [variable(a) for a in arrays]
        analytic = backward(build(*leaves), {i: leaf for i, leaf in enumerate(leaves)})
        for i, array in enumerate(arrays):
            numeric = numerical_gradient(lambda: build(*[constant(a) for a in arrays]).value, array)
            self.assertLess(relative_error(analytic[i], numeric), tol, f"input {i}")


def weighted(node, seed=0):
    """Scalar sum(node * C) for a fixed random C."""
    weights = np.random.default_rng(seed).standard_normal(node.shape)
    return ad.sum(node * constant(weights))


class TestElementwise(GradientCheck):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_add_with_bias_broadcast(self):
        self.assertGradients(lambda a, b: weighted(a + b), self.rng.standard_normal((4, 3)), self.rng.standard_normal(3))

    def test_subtract(self):
        self.assertGradients(lambda a, b: weighted(a - b), self.rng.standard_normal((2, 3)), self.rng.standard_normal((2, 3)))

    def test_multiply_broadcast(self):
        self.assertGradients(lambda a, b: weighted(a * b), self.rng.standard_normal((2, 3)), self.rng.standard_normal((1, 3)))

    def test_divide(self):
        self.assertGradients(lambda a, b: weighted(a / b), self.rng.standard_normal((3,)), self.rng.uniform(1.0, 2.0, (3,)))

    def test_negative(self):
        self.assertGradients(lambda a: weighted(-a), self.rng.standard_normal((3, 2)))

    def test_unary_functions(self):
        x = self.rng.standard_normal((3, 4))
        positive = self.rng.uniform(0.5, 2.0, (3, 4))
        for fn in (ad.relu, ad.softplus, ad.sigmoid, ad.exp, ad.square):
            self.assertGradients(lambda a: weighted(fn(a)), x)
        for fn in (ad.log, ad.sqrt):
            self.assertGradients(lambda a: weighted(fn(a)), positive)

    def test_shape_mismatch(self):
        with self.assertRaises(ConfigurationError):
            ad.add(variable(np.ones(3)), variable(np.ones(4)))


class TestLinearAlgebra(GradientCheck):
    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_batched_matmul(self):
        self.assertGradients(lambda a, b: weighted(a @ b), self.rng.standard_normal((2, 3, 4)), self.rng.standard_normal((4, 2)))

    def test_transpose(self):
        self.assertGradients(lambda a: weighted(ad.transpose(a)), self.rng.standard_normal((2, 3, 4)))

    def test_matmul_shape_check(self):
        with self.assertRaises(ConfigurationError):
            ad.matmul(variable(np.ones((2, 3))), variable(np.ones((2, 3))))

    def test_conv2d(self):
        x = self.rng.standard_normal((2, 2, 4, 3))
        w = self.rng.standard_normal((3, 2, 3, 3))
        b = self.rng.standard_normal(3)
        self.assertGradients(lambda x, w, b: weighted(ad.conv2d(x, w, b)), x, w, b)

    def test_conv2d_values(self):
        x = np.zeros((1, 1, 3, 3))
        x[0, 0, 1, 1] = 1.0
        w = np.arange(9.0).reshape(1, 1, 3, 3)
        out = ad.conv2d(constant(x), constant(w)).value[0, 0]
        # cross-correlation of a centred impulse flips the kernel
        np.testing.assert_array_equal(out, w[0, 0][::-1, ::-1])

    def test_conv2d_rejects_even_kernel(self):
        with self.assertRaises(ConfigurationError):
            ad.conv2d(constant(np.ones((1, 1, 3, 3))), constant(np.ones((1, 1, 2, 2))))


class TestReductionsAndShapes(GradientCheck):
    def setUp(self):
        self.rng = np.random.default_rng(2)

    def test_sum_and_mean(self):
        x = self.rng.standard_normal((3, 4, 2))
        self.assertGradients(lambda a: weighted(ad.sum(a, axis=1)), x)
        self.assertGradients(lambda a: weighted(ad.mean(a, axis=(0, 2))), x)
        self.assertGradients(lambda a: ad.mean(a), x)
        self.assertGradients(lambda a: weighted(ad.sum(a, axis=-1, keepdims=True)), x)

    def test_reshape_flatten_concat_index(self):
        x = self.rng.standard_normal((2, 3, 2))
        y = self.rng.standard_normal((2, 4))
        self.assertGradients(lambda a: weighted(ad.reshape(a, (3, 4))), x)
        self.assertGradients(lambda a, b: weighted(ad.concat([ad.flatten(a), b], axis=1)), x, y)
        self.assertGradients(lambda a: weighted(ad.index(a, 1)), x)

    def test_detach_blocks_gradient(self):
        x = variable(np.array([1.0, 2.0]))
        grads = backward(ad.sum(ad.detach(x) * x), {"x": x})
        np.testing.assert_array_equal(grads["x"], [1.0, 2.0])


class TestLayers(GradientCheck):
    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_batch_norm_training(self):
        x = self.rng.standard_normal((5, 3, 2, 2))
        gamma = self.rng.uniform(0.5, 1.5, 3)
        beta = self.rng.standard_normal(3)

        def build(x, g, b):
            return weighted(ad.batch_norm(x, g, b, np.zeros(3), np.ones(3), Mode.train(None), "bn"))

        self.assertGradients(build, x, gamma, beta)

    def test_batch_norm_training_statistics(self):
        x = self.rng.standard_normal((6, 4)) * 3.0 + 1.0
        mode = Mode.train(None)
        out = ad.batch_norm(constant(x), constant(np.ones(4)), constant(np.zeros(4)), np.zeros(4), np.ones(4), mode, "bn")
        np.testing.assert_allclose(out.value.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.value.var(axis=0), 1.0, rtol=1e-6)
        key, batch_mean, batch_var = mode.buffer_updates[0]
        self.assertEqual(key, "bn")
        np.testing.assert_allclose(batch_mean, x.mean(axis=0))
        np.testing.assert_allclose(batch_var, x.var(axis=0))

    def test_batch_norm_eval_is_affine(self):
        x = self.rng.standard_normal((4, 2))
        gamma, beta = np.array([2.0, 0.5]), np.array([1.0, -1.0])
        mean, var = np.array([0.5, -0.5]), np.array([4.0, 0.25])
        out = ad.batch_norm(constant(x), constant(gamma), constant(beta), mean, var, Mode.eval(), "bn", eps=0.0)
        np.testing.assert_allclose(out.value, gamma * (x - mean) / np.sqrt(var) + beta)

        def build(x, g, b):
            return weighted(ad.batch_norm(x, g, b, mean, var, Mode.eval(), "bn"))

        self.assertGradients(build, x, gamma, beta)

    def test_dropout_frozen_masks(self):
        x = self.rng.standard_normal((4, 5))
        mode = Mode.train(np.random.default_rng(0), dropout_rate=0.5, frozen_masks={})
        self.assertGradients(lambda a: weighted(ad.dropout(a, mode, "d")), x)
        mask = mode.frozen_masks["d"]
        self.assertTrue(set(np.unique(mask)).issubset({0.0, 2.0}))

    def test_dropout_eval_identity(self):
        x = constant(np.ones(3))
        self.assertIs(ad.dropout(x, Mode.eval(), "d"), x)

    def test_power_scale_projection(self):
        power = np.array([0.5, 2.0, 4.0])
        self.assertGradients(lambda p: weighted(ad.power_scale(p, 1.0)), power)
        np.testing.assert_allclose(ad.power_scale(constant(power), 1.0).value, [1.0, np.sqrt(0.5), 0.5])

    def test_power_scale_strict(self):
        power = np.array([0.5, 2.0])
        self.assertGradients(lambda p: weighted(ad.power_scale(p, 1.0, strict=True)), power)
        with self.assertRaises(DegenerateInputError):
            ad.power_scale(constant(np.array([0.0, 1.0])), 1.0, strict=True)


class TestComplex(GradientCheck):
    def setUp(self):
        self.rng = np.random.default_rng(4)

    def test_complex_products(self):
        shape_a, shape_b = (2, 3, 4), (2, 4, 2)
        arrays = [self.rng.standard_normal(s) for s in (shape_a, shape_a, shape_b, shape_b)]

        def build(ar, ai, br, bi):
            out = ad.complex_matmul(ComplexPair(ar, ai), ad.complex_hermitian(ad.complex_hermitian(ComplexPair(br, bi))))
            return weighted(out.re, 1) + weighted(out.im, 2)

        self.assertGradients(build, *arrays)
        value = ad.complex_matmul(ComplexPair(constant(arrays[0]), constant(arrays[1])),
                                  ComplexPair(constant(arrays[2]), constant(arrays[3]))).value
        np.testing.assert_allclose(value, (arrays[0] + 1j * arrays[1]) @ (arrays[2] + 1j * arrays[3]))

    def test_complex_multiply(self):
        arrays = [self.rng.standard_normal((3, 2)) for _ in range(4)]

        def build(ar, ai, br, bi):
            out = ad.complex_multiply(ComplexPair(ar, ai), ComplexPair(br, bi))
            return weighted(out.re, 1) + weighted(out.im, 2)

        self.assertGradients(build, *arrays)

    def test_hermitian_solve_values(self):
        M = self.rng.standard_normal((2, 3, 3)) + 1j * self.rng.standard_normal((2, 3, 3))
        A = M @ np.conj(np.swapaxes(M, -1, -2)) + np.eye(3)
        B = self.rng.standard_normal((2, 3, 2)) + 1j * self.rng.standard_normal((2, 3, 2))
        X, degenerate = ad.hermitian_solve(ComplexPair.from_complex(A), ComplexPair.from_complex(B))
        np.testing.assert_allclose(X.value, np.linalg.solve(A, B), rtol=1e-10, atol=1e-12)
        self.assertFalse(degenerate.any())

    def test_hermitian_solve_gradient(self):
        # A = M M^H + I built inside the graph keeps A Hermitian under every perturbation
        arrays = [self.rng.standard_normal((2, 3, 3)) for _ in range(2)] + \
                 [self.rng.standard_normal((2, 3, 2)) for _ in range(2)]

        def build(mr, mi, br, bi):
            M = ComplexPair(mr, mi)
            gram = ad.complex_matmul(M, ad.complex_hermitian(M))
            A = ComplexPair(gram.re + constant(np.eye(3)), gram.im)
            X, _ = ad.hermitian_solve(A, ComplexPair(br, bi))
            return weighted(X.re, 1) + weighted(X.im, 2)

        self.assertGradients(build, *arrays)

    def test_hermitian_solve_failure(self):
        A = ComplexPair.from_complex(-np.eye(2)[None])
        B = ComplexPair.from_complex(np.ones((1, 2, 1)))
        with self.assertRaises(NumericFailureError):
            ad.hermitian_solve(A, B)
        X, degenerate = ad.hermitian_solve(A, B, on_failure="zero")
        self.assertTrue(degenerate[0])
        np.testing.assert_array_equal(X.value, 0.0)


class TestBackward(unittest.TestCase):
    def test_reused_node_gradients_add(self):
        x = variable(np.array([1.0, -2.0]))
        y = x * x + x
        np.testing.assert_allclose(backward(ad.sum(y), {"x": x})["x"], [3.0, -3.0])

    def test_unreachable_leaf_gets_zeros(self):
        x, z = variable(np.ones(2)), variable(np.ones((3, 3)))
        grads = backward(ad.sum(x), {"x": x, "z": z})
        np.testing.assert_array_equal(grads["z"], np.zeros((3, 3)))

    def test_non_scalar_loss(self):
        with self.assertRaises(ConfigurationError):
            backward(variable(np.ones(2)), {})

    def test_long_chain(self):
        x = variable(1.0)
        y = x
        for _ in range(20000):
            y = y + 1.0
        self.assertEqual(float(backward(y, {"x": x})["x"]), 1.0)

    def test_numerical_gradient_needs_contiguous(self):
        with self.assertRaises(ConfigurationError):
            numerical_gradient(lambda: 0.0, np.ones((4, 4))[:, ::2])

    def test_docstring_example(self):
        x = variable(3.0)
        self.assertEqual(float(backward(ad.square(x), {"x": x})["x"]), 6.0)


if __name__ == '__main__':
    unittest.main()
