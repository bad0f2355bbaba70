#!/usr/bin/env python3
"""
Tests for the vanishing-epsilon horizon construction.
"""

import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

from qsphere.config.settings import ORACLE_TOL
from qsphere.core.conformal_foliation import RoundFoliation
from qsphere.core.errors import ConfigError, HypothesisError
from qsphere.core.geometry_audit import (
    adm_mass,
    extrinsic_curvature,
    hawking_drift_check,
    hawking_mass,
    mass_lower_bound_check,
    reconstruct_Rbar,
)
from qsphere.core.horizon import horizon_evolve
from qsphere.core.parabolic_evolver import ConformalBranch, EvolverControls, RicciBranch
from qsphere.core.prescribed_curvature import PowerCurvature, ZeroCurvature
from qsphere.core.ricci_flow_foliation import AxiGrid, ellipsoid_metric, run_flow
from qsphere.core.sphere_ops import SphereGrid
from qsphere.utils.fitting import observed_orders


class SchwarzschildHorizonTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        grid = SphereGrid(8, 16)
        cls.branch = ConformalBranch(RoundFoliation(grid), ZeroCurvature(grid))
        controls = EvolverControls(ds=0.05, snapshot_every=2)
        cls.horizon = horizon_evolve(cls.branch, 3.0, controls, eps_ladder=[0.04, 0.02, 0.01], eta=0.1, threads=2)

    def test_scaled_lapse_is_identically_one(self):
        np.testing.assert_allclose(self.horizon.w_scaled, 1.0, atol=1e-10)
        np.testing.assert_allclose(self.horizon.phi_eps, 1.0, atol=1e-10)
        self.assertIsNone(self.horizon.order)

    def test_physical_record_has_unit_half_mass(self):
        record = self.horizon.record
        self.assertAlmostEqual(record.times[0], 1.04, places=12)
        self.assertAlmostEqual(record.times[-1], 3.0, places=12)
        np.testing.assert_allclose(record.mean_mass(), 0.5, atol=1e-9)
        self.assertTrue(record.provenance["horizon"])
        self.assertAlmostEqual(hawking_mass(record, float(record.times[-1])).value, 0.5, places=9)

    def test_eta_window_and_mass_bracket(self):
        self.assertAlmostEqual(self.horizon.window_end, 3.0, places=12)
        self.assertTrue(self.horizon.mass_bracket_passed)
        self.assertAlmostEqual(self.horizon.eta_min, 0.0, places=12)
        self.assertTrue(all(diff < 1e-10 for diff in self.horizon.level_differences()))

    def test_reconstruction_closes_with_stored_rate(self):
        audit = reconstruct_Rbar(self.horizon.record)
        self.assertLess(audit.max_error, 1e-8)

    def test_report_is_serializable(self):
        payload = self.horizon.to_dict()
        self.assertEqual(payload["eps_ladder"], [0.04, 0.02, 0.01])
        self.assertTrue(payload["mass_bracket_passed"])
        self.assertEqual(payload["window_status"], "open")
        self.assertIsNotNone(payload["h_slope"])


class EllipsoidHorizonTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        grid = SphereGrid(16, 32)
        traj = run_flow(ellipsoid_metric(AxiGrid(16), 1.2), 20.0)
        cls.branch = RicciBranch(traj, ZeroCurvature(grid))
        cls.horizons = [
            horizon_evolve(cls.branch, 20.0, EvolverControls(ds=ds, snapshot_every=5),
                           eps_ladder=[0.04, 0.02, 0.01], eta=0.8, threads=3)
            for ds in (0.02, 0.01)
        ]

    def test_eta_window_opens_above_curvature_deviation(self):
        horizon = self.horizons[-1]
        self.assertGreater(horizon.eta_min, 0.0)
        self.assertLess(horizon.eta_min, 0.8)
        self.assertEqual(horizon.window_status, "open")
        self.assertIsNotNone(horizon.window_end)
        self.assertTrue(horizon.mass_bracket_passed)

    def test_leaves_stay_mean_convex(self):
        record = self.horizons[-1].record
        for t in (float(record.times[0]), float(record.times[-1])):
            H, _ = extrinsic_curvature(record, t)
            self.assertGreater(H.values.min(), 0.0)

    def test_hawking_mass_is_monotone_and_drift_converges(self):
        reports = [hawking_drift_check(horizon.record) for horizon in self.horizons]
        for report in reports:
            self.assertGreaterEqual(report.min_increment, -1e-6)
            self.assertTrue(report.monotone)
        (order,) = observed_orders([report.max_residual for report in reports])
        self.assertGreaterEqual(order, 1.0)

    def test_adm_mass_respects_horizon_bound(self):
        record = self.horizons[-1].record
        report = adm_mass(record)
        verdict = mass_lower_bound_check(record, report)
        self.assertEqual(verdict["verdict"], "pass")
        self.assertGreaterEqual(report.m_inf, 0.5 - report.uncertainty - 1e-6)

    def test_oracle_closes_on_extrapolated_record(self):
        self.assertLessEqual(reconstruct_Rbar(self.horizons[-1].record).max_error, ORACLE_TOL)


class HorizonInputTests(unittest.TestCase):
    def setUp(self):
        self.grid = SphereGrid(8, 16)
        self.controls = EvolverControls(ds=0.05)

    def test_ladder_must_decrease(self):
        branch = ConformalBranch(RoundFoliation(self.grid), ZeroCurvature(self.grid))
        with self.assertRaises(ConfigError):
            horizon_evolve(branch, 3.0, self.controls, eps_ladder=[0.01, 0.02])
        with self.assertRaises(ConfigError):
            horizon_evolve(branch, 3.0, self.controls, eps_ladder=[0.02])
        with self.assertRaises(ConfigError):
            horizon_evolve(branch, 3.0, self.controls, eps_ladder=[0.04, 0.02, 0.005])

    def test_range_must_exceed_largest_epsilon(self):
        branch = ConformalBranch(RoundFoliation(self.grid), ZeroCurvature(self.grid))
        with self.assertRaises(ConfigError):
            horizon_evolve(branch, 1.03, self.controls, eps_ladder=[0.04, 0.02])

    def test_curvature_sign_is_required(self):
        branch = ConformalBranch(RoundFoliation(self.grid), PowerCurvature(self.grid, 3.0, 2.0))
        with self.assertRaises(HypothesisError):
            horizon_evolve(branch, 3.0, self.controls)


if __name__ == "__main__":
    unittest.main()
