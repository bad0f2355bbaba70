#!/usr/bin/env python3
"""
Tests for the sphere grid, spectral transforms and field helpers.
"""

import math
import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

from qsphere.core.errors import GridError, NumericalError
from qsphere.core.sphere_ops import (
    Field,
    SphereGrid,
    build_grid,
    dealias,
    field_extrema,
    from_spectral,
    gradient_sigma,
    hessian_sigma,
    inner_sigma,
    integrate_sigma,
    laplacian_sigma,
    read_field,
    to_spectral,
    write_field,
)


class SphereGridTests(unittest.TestCase):
    def setUp(self):
        self.grid = build_grid(16, 32)

    def test_weights_sum_to_sphere_area(self):
        self.assertAlmostEqual(float(np.sum(self.grid.weights)), 4.0 * math.pi, places=12)

    def test_quadrature_of_cos_squared(self):
        x = Field.from_function(self.grid, lambda theta, phi: np.cos(theta) ** 2)
        self.assertAlmostEqual(integrate_sigma(x), 4.0 * math.pi / 3.0, places=12)

    def test_nodes_ordered_north_to_south(self):
        self.assertTrue(np.all(np.diff(self.grid.cos_theta) < 0.0))
        self.assertEqual(self.grid.lmax, 15)

    def test_rejects_low_resolution(self):
        with self.assertRaises(GridError):
            SphereGrid(4, 8)
        with self.assertRaises(GridError):
            SphereGrid(8, 10)

    def test_spacing_is_positive(self):
        self.assertGreater(self.grid.spacing(), 0.0)
        self.assertLessEqual(self.grid.spacing(), math.pi / 8.0)

    def test_grids_compare_by_shape(self):
        self.assertEqual(self.grid, SphereGrid(16, 32))
        self.assertNotEqual(self.grid, SphereGrid(16, 48))


class SpectralOperatorTests(unittest.TestCase):
    def setUp(self):
        self.grid = SphereGrid(12, 24)

    def test_laplacian_of_y20(self):
        y20 = Field.ylm_real(self.grid, 2, 0)
        lap = laplacian_sigma(y20)
        np.testing.assert_allclose(lap.values, -6.0 * y20.values, atol=1e-11)

    def test_laplacian_of_sectoral_harmonic(self):
        y33 = Field.ylm_real(self.grid, 3, 3)
        lap = laplacian_sigma(y33)
        np.testing.assert_allclose(lap.values, -12.0 * y33.values, atol=1e-11)

    def test_harmonics_are_orthonormal(self):
        y20 = Field.ylm_real(self.grid, 2, 0)
        y10 = Field.ylm_real(self.grid, 1, 0)
        self.assertAlmostEqual(inner_sigma(y20, y20), 1.0, places=12)
        self.assertAlmostEqual(inner_sigma(y20, y10), 0.0, places=12)

    def test_analysis_recovers_coefficient(self):
        y20 = Field.ylm_real(self.grid, 2, 0)
        coeffs = to_spectral(y20)
        self.assertAlmostEqual(coeffs.coefficient(2, 0).real, 1.0, places=12)
        self.assertAlmostEqual(abs(coeffs.coefficient(3, 1)), 0.0, places=12)
        with self.assertRaises(GridError):
            coeffs.coefficient(20, 0)

    def test_synthesis_inverts_analysis(self):
        x = Field.ylm_real(self.grid, 3, 2) + 0.5 * Field.ylm_real(self.grid, 1, 1)
        np.testing.assert_allclose(from_spectral(to_spectral(x)).values, x.values, atol=1e-12)

    def test_laplacian_is_self_adjoint(self):
        f = Field.ylm_real(self.grid, 2, 0) + 0.3 * Field.ylm_real(self.grid, 3, 1)
        g = (Field.ylm_real(self.grid, 1, 1) + 0.5 * Field.ylm_real(self.grid, 3, 0)
             + 0.2 * Field.ylm_real(self.grid, 2, 1))
        self.assertAlmostEqual(inner_sigma(laplacian_sigma(f), g), inner_sigma(f, laplacian_sigma(g)), places=11)

    def test_divergence_theorem(self):
        y21 = Field.ylm_real(self.grid, 2, 1)
        f = y21 + 0.4 * Field.ylm_real(self.grid, 1, 0)
        g = Field.ylm_real(self.grid, 3, 1) + 0.7 * y21
        self.assertAlmostEqual(integrate_sigma(laplacian_sigma(f)), 0.0, places=11)
        f_theta, f_phi = gradient_sigma(f)
        g_theta, g_phi = gradient_sigma(g)
        dot = f_theta * g_theta + f_phi * g_phi
        self.assertAlmostEqual(inner_sigma(laplacian_sigma(f), g), -integrate_sigma(dot), places=10)
        # only the shared degree-two component survives
        self.assertAlmostEqual(inner_sigma(laplacian_sigma(f), g), -4.2 * inner_sigma(y21, y21), places=10)

    def test_gradient_of_cos_theta(self):
        x = Field.from_function(self.grid, lambda theta, phi: np.cos(theta))
        g_theta, g_phi = gradient_sigma(x)
        sin_theta = self.grid.sin_theta[:, None] * np.ones(self.grid.shape)
        np.testing.assert_allclose(g_theta.values, -sin_theta, atol=1e-11)
        np.testing.assert_allclose(g_phi.values, 0.0, atol=1e-11)

    def test_hessian_of_first_harmonic(self):
        # Hess f = -f sigma for degree-one functions
        x = Field.from_function(self.grid, lambda theta, phi: np.cos(theta))
        h_tt, h_tp, h_pp = hessian_sigma(x)
        np.testing.assert_allclose(h_tt.values, -x.values, atol=1e-10)
        np.testing.assert_allclose(h_pp.values, -x.values, atol=1e-10)
        np.testing.assert_allclose(h_tp.values, 0.0, atol=1e-10)

    def test_dealias_keeps_low_degrees(self):
        y20 = Field.ylm_real(self.grid, 2, 0)
        np.testing.assert_allclose(dealias(y20).values, y20.values, atol=1e-12)
        y11 = Field.ylm_real(self.grid, 11, 0)
        np.testing.assert_allclose(dealias(y11).values, 0.0, atol=1e-11)


class FieldTests(unittest.TestCase):
    def setUp(self):
        self.grid = SphereGrid(8, 16)

    def test_arithmetic_and_extrema(self):
        x = Field.constant(self.grid, 2.0)
        y = 1.0 + x * 3.0 - x / 2.0
        self.assertEqual(field_extrema(y), (6.0, 6.0))
        self.assertAlmostEqual(y.mean(), 6.0, places=12)

    def test_grid_mismatch_raises(self):
        x = Field.constant(self.grid, 1.0)
        y = Field.constant(SphereGrid(10, 20), 1.0)
        with self.assertRaises(GridError):
            x + y
        with self.assertRaises(GridError):
            inner_sigma(x, y)

    def test_non_finite_values_rejected(self):
        values = np.ones(self.grid.shape)
        values[0, 0] = np.nan
        with self.assertRaises(NumericalError):
            Field(self.grid, values)

    def test_field_file_roundtrip_and_shape_check(self):
        x = Field.ylm_real(self.grid, 2, 1)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "x.qsf")
            write_field(path, x)
            np.testing.assert_array_equal(read_field(path, self.grid).values, x.values)
            with self.assertRaises(GridError):
                read_field(path, SphereGrid(10, 20))


if __name__ == "__main__":
    unittest.main()
