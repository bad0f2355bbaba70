#!/usr/bin/env python3
"""
Tests for the fitting helpers, the binary field formats and run directories.
"""

import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

from qsphere.core.errors import ExtrapolationError
from qsphere.core.sphere_ops import SphereGrid
from qsphere.models.record import RecordStore, SolutionRecord
from qsphere.utils.fitting import (
    finite_difference_weights,
    geometric_ratio,
    line_fit,
    observed_orders,
    power_law_fit,
    richardson_extrapolate,
    richardson_step,
    stencil_derivative,
    tail_integral,
)
from qsphere.utils.io import (
    decode_qsf,
    decode_qsp,
    encode_qsf,
    encode_qsp,
    read_csv,
    render_csv,
)


class FittingTests(unittest.TestCase):
    def test_exact_line(self):
        x = np.linspace(0.0, 4.0, 9)
        fit = line_fit(x, 3.0 - 0.5 * x)
        self.assertAlmostEqual(fit.slope, -0.5, places=12)
        self.assertAlmostEqual(fit.intercept, 3.0, places=12)
        self.assertAlmostEqual(fit.r2, 1.0, places=12)

    def test_constant_data_is_a_perfect_fit(self):
        fit = line_fit([1.0, 2.0, 3.0], [0.25, 0.25, 0.25])
        self.assertEqual(fit.slope, 0.0)
        self.assertEqual(fit.intercept, 0.25)
        self.assertEqual(fit.r2, 1.0)

    def test_power_law_fit_recovers_exponent(self):
        t = np.geomspace(1.0, 50.0, 20)
        fit = power_law_fit(t, 2.0 * t ** -1.5)
        self.assertAlmostEqual(fit.slope, -1.5, places=10)
        self.assertIsNone(power_law_fit(t, np.zeros_like(t), floor=1e-12))

    def test_richardson_first_order_levels(self):
        eps = [0.04, 0.02, 0.01]
        limit = np.array([1.0, 2.0])
        levels = [limit + 3.0 * e for e in eps]
        value, order = richardson_extrapolate(levels, 2.0)
        np.testing.assert_allclose(value, limit, atol=1e-12)
        self.assertAlmostEqual(order, 1.0, places=10)

    def test_richardson_two_levels_assume_first_order(self):
        value, order = richardson_extrapolate([np.array([1.2]), np.array([1.1])], 2.0)
        np.testing.assert_allclose(value, [1.0], atol=1e-12)
        self.assertEqual(order, 1.0)

    def test_richardson_rejects_growing_differences(self):
        levels = [np.array([1.0]), np.array([1.1]), np.array([1.4])]
        with self.assertRaises(ExtrapolationError):
            richardson_extrapolate(levels, 2.0)
        with self.assertRaises(ExtrapolationError):
            richardson_extrapolate([np.array([1.0])], 2.0)

    def test_observed_orders(self):
        (order,) = observed_orders([1e-2, 2.5e-3])
        self.assertAlmostEqual(order, 2.0, places=12)
        self.assertEqual(observed_orders([1e-2, 0.0]), [None])

    def test_geometric_ratio(self):
        self.assertAlmostEqual(geometric_ratio([0.04, 0.02, 0.01]), 2.0, places=12)
        self.assertAlmostEqual(geometric_ratio([0.09, 0.03]), 3.0, places=12)
        with self.assertRaises(ValueError):
            geometric_ratio([0.04, 0.02, 0.005])
        with self.assertRaises(ValueError):
            geometric_ratio([0.04])

    def test_richardson_step_removes_leading_error(self):
        h = np.array([0.1, 0.05])
        values = 1.0 + 3.0 * h ** 2
        limit = richardson_step(np.array([values[0]]), np.array([values[1]]), 2.0, 2.0)
        np.testing.assert_allclose(limit, [1.0], rtol=0, atol=1e-14)

    def test_finite_difference_weights_on_uneven_nodes(self):
        nodes = [0.0, 0.3, 0.5, 1.1, 1.2]
        weights = finite_difference_weights(0.5, nodes)
        values = np.array([x ** 4 - x for x in nodes])
        self.assertAlmostEqual(float(weights @ values), 4.0 * 0.5 ** 3 - 1.0, places=10)

    def test_stencil_derivative_exact_for_quartics(self):
        x = np.array([1.0, 1.2, 1.5, 1.6, 2.0, 2.4, 2.5, 3.0])
        values = np.stack([x ** 4 - 2.0 * x, 3.0 * x ** 2], axis=1)
        derivative = stencil_derivative(x, values)
        np.testing.assert_allclose(derivative[:, 0], 4.0 * x ** 3 - 2.0, rtol=1e-9)
        np.testing.assert_allclose(derivative[:, 1], 6.0 * x, rtol=1e-9)
        with self.assertRaises(ValueError):
            stencil_derivative(x[:2], values[:2])

    def test_tail_integral_verdicts(self):
        t = np.geomspace(1.0, 100.0, 400)
        integrable = tail_integral(t, t ** -2.0, min_r2=0.99)
        self.assertEqual(integrable.verdict, "pass")
        self.assertAlmostEqual(integrable.exponent, 2.0, places=6)
        self.assertAlmostEqual(integrable.total, 1.0, places=3)
        self.assertEqual(tail_integral(t, t ** -0.5, min_r2=0.99).verdict, "fail")
        self.assertEqual(tail_integral(t, np.zeros_like(t), min_r2=0.99).verdict, "pass")


class FieldFormatTests(unittest.TestCase):
    def test_csv_uses_seventeen_digits(self):
        text = render_csv(["a", "b", "c", "d"], [(0.1, True, None, 3)])
        self.assertEqual(text, "a,b,c,d\n0.10000000000000001,1,,3\n")

    def test_qsf_header_is_checked(self):
        payload = encode_qsf(np.ones((2, 4)))
        self.assertEqual(payload[:4], b"QSF1")
        self.assertEqual(len(payload), 12 + 8 * 8)
        with self.assertRaises(ValueError):
            decode_qsf(b"XXXX" + payload[4:])
        with self.assertRaises(ValueError):
            decode_qsf(payload[:-8])
        with self.assertRaises(ValueError):
            encode_qsf(np.ones(3))

    def test_qsp_header_is_checked(self):
        payload = encode_qsp(np.arange(4.0))
        np.testing.assert_array_equal(decode_qsp(payload), np.arange(4.0))
        with self.assertRaises(ValueError):
            decode_qsp(payload[:-8])


class RecordStoreTests(unittest.TestCase):
    def test_save_and_load_run_directory(self):
        grid = SphereGrid(8, 16)
        times = np.array([1.0, 2.0, 4.0])
        u = np.stack([np.full(grid.shape, 1.0 + 0.1 * k) for k in range(3)])
        u_dot = np.zeros_like(u)
        record = SolutionRecord("conformal", grid, times, u, provenance={"stepper": "rk4"}, u_dot=u_dot)
        with tempfile.TemporaryDirectory() as tmp:
            store = RecordStore(tmp)
            store.save(record, manifest_extra={"preset": "test"})
            loaded = store.load()
            columns, data = read_csv(os.path.join(tmp, "summary.csv"))
            manifest = store.manifest()
        np.testing.assert_array_equal(loaded.u, u)
        np.testing.assert_array_equal(loaded.times, times)
        np.testing.assert_array_equal(loaded.u_dot, u_dot)
        self.assertEqual(loaded.provenance["stepper"], "rk4")
        self.assertEqual(manifest["preset"], "test")
        self.assertEqual(columns, ["t", "min_w", "max_w", "mean_m", "hawking_mass"])
        self.assertEqual(data.shape, (3, 5))
        np.testing.assert_allclose(data[:, 3], record.mean_mass(), rtol=1e-15)


if __name__ == "__main__":
    unittest.main()
