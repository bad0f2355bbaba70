#!/usr/bin/env python3
"""
Tests for the maximum-principle envelopes and the admissibility constant.
"""

import math
import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

from qsphere.core.bounds_envelopes import (
    admissibility_json,
    closed_form_round,
    constant_K_conformal,
    constant_K_ricci,
    envelope_check,
    envelope_trace_csv,
    envelopes_conformal,
    envelopes_scaled,
    conformal_coefficients,
    scaled_initial_value,
)
from qsphere.core.conformal_foliation import RoundFoliation
from qsphere.core.parabolic_evolver import ConformalBranch, EvolverControls, evolve
from qsphere.core.prescribed_curvature import PowerCurvature, ZeroCurvature
from qsphere.core.ricci_flow_foliation import AxiGrid, round_metric, run_flow
from qsphere.core.sphere_ops import Field, SphereGrid
from qsphere.models.record import SolutionRecord
from qsphere.utils.io import read_csv, read_json
from qsphere.utils.sweep import exponential_sweep, refine_grid


class SweepTests(unittest.TestCase):
    def test_constant_coefficients_are_exact(self):
        s = np.linspace(0.0, 3.0, 31)
        delta = exponential_sweep(s, np.full(s.size, 2.0), np.full(s.size, 0.5), start=1.0)
        exact = 4.0 + (1.0 - 4.0) * np.exp(-0.5 * s)
        np.testing.assert_allclose(delta, exact, atol=1e-13)

    def test_refine_grid_keeps_nodes(self):
        s = np.array([0.0, 1.0, 3.0])
        fine = refine_grid(s, 4)
        self.assertEqual(fine.size, 9)
        np.testing.assert_allclose(fine[::4], s)


class EnvelopeTests(unittest.TestCase):
    def setUp(self):
        self.grid = SphereGrid(8, 16)
        self.fol = RoundFoliation(self.grid)
        self.times = np.geomspace(1.0, 10.0, 20)

    def test_round_envelopes_match_closed_form(self):
        env = envelopes_conformal(self.fol, ZeroCurvature(self.grid), self.times)
        expected = closed_form_round(env.times)
        np.testing.assert_allclose(env.lower, expected, atol=1e-12)
        np.testing.assert_allclose(env.upper, expected, atol=1e-12)
        self.assertTrue(env.ordered())

    def test_round_background_has_zero_K(self):
        k = constant_K_conformal(self.fol, ZeroCurvature(self.grid), 10.0)
        self.assertEqual(k.value, 0.0)
        self.assertTrue(math.isinf(k.phi_bound))
        self.assertIsNone(k.to_dict()["phi_bound"])

    def test_negative_curvature_gap_gives_positive_K(self):
        # t^2 Rbar = 3 exceeds R_f = 2, so the lower source is -1/2
        rbar = PowerCurvature(self.grid, 3.0, 2.0)
        k = constant_K_conformal(self.fol, rbar, 10.0)
        self.assertAlmostEqual(k.value, 4.5, places=8)
        self.assertTrue(k.unsaturated)
        self.assertAlmostEqual(k.phi_bound, 1.0 / math.sqrt(4.5), places=8)

    def test_ricci_round_background_agrees_with_conformal(self):
        traj = run_flow(round_metric(AxiGrid(8)), 10.0)
        k = constant_K_ricci(traj, ZeroCurvature(self.grid), 10.0)
        self.assertLess(k.value, 1e-9)

    def test_scaled_envelopes_of_round_background_are_one(self):
        coefficients = conformal_coefficients(self.fol, ZeroCurvature(self.grid))
        env = envelopes_scaled(coefficients, np.geomspace(0.01, 5.0, 16), 0.01)
        np.testing.assert_allclose(env.lower, 1.0, atol=1e-10)
        np.testing.assert_allclose(env.upper, 1.0, atol=1e-10)
        self.assertAlmostEqual(scaled_initial_value(env, 0.01), 1.0, places=10)

    def test_envelope_check_passes_for_closed_form_record(self):
        env = envelopes_conformal(self.fol, ZeroCurvature(self.grid), self.times)
        c = 0.8
        w = 1.0 + (c ** -2 - 1.0) / self.times
        u = np.stack([np.full(self.grid.shape, value ** -0.5) for value in w])
        record = SolutionRecord("conformal", self.grid, self.times, u)
        report = envelope_check(record, env)
        self.assertTrue(report.passed)
        self.assertLess(report.worst, 1e-10)

    def test_envelope_check_flags_violation(self):
        env = envelopes_conformal(self.fol, ZeroCurvature(self.grid), self.times)
        u = np.ones((self.times.size,) + self.grid.shape)
        u[-1] *= 0.5
        record = SolutionRecord("conformal", self.grid, self.times, u)
        report = envelope_check(record, env)
        self.assertFalse(report.passed)
        self.assertGreater(report.worst_upper, 1.0)

    def test_exports(self):
        env = envelopes_conformal(self.fol, ZeroCurvature(self.grid), self.times)
        k = constant_K_conformal(self.fol, ZeroCurvature(self.grid), 10.0)
        with tempfile.TemporaryDirectory() as tmp:
            envelope_trace_csv(env, os.path.join(tmp, "envelopes.csv"))
            admissibility_json(k, os.path.join(tmp, "admissibility.json"))
            columns, data = read_csv(os.path.join(tmp, "envelopes.csv"))
            payload = read_json(os.path.join(tmp, "admissibility.json"))
        self.assertEqual(columns, ["t", "lower", "upper", "exp_lower", "exp_upper"])
        self.assertEqual(data.shape, (env.times.size, 5))
        self.assertEqual(payload["K"], 0.0)


class EnvelopeRefinementTests(unittest.TestCase):
    def test_required_tolerance_halves_under_refinement(self):
        c = 0.5
        t_end = math.exp(0.8)
        worst = []
        for nlat, ds in ((8, 0.04), (16, 0.02)):
            grid = SphereGrid(nlat, 2 * nlat)
            branch = ConformalBranch(RoundFoliation(grid), ZeroCurvature(grid))
            record = evolve(branch, Field.constant(grid, c), t_end, EvolverControls(ds=ds, snapshot_every=5))
            env = envelopes_conformal(branch.fol, branch.rbar, record.times)
            report = envelope_check(record, env)
            self.assertTrue(report.passed)
            worst.append(report.worst)
        self.assertGreater(worst[0], 0.0)
        self.assertLessEqual(worst[1], 0.5 * worst[0])


if __name__ == "__main__":
    unittest.main()
