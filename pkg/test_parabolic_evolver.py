#!/usr/bin/env python3
"""
Tests for the lapse right-hand sides, the steppers and the evolve driver.
"""

import math
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

from qsphere.core.bounds_envelopes import constant_K_conformal
from qsphere.core.conformal_foliation import PowerFoliation, RoundFoliation
from qsphere.core.errors import GridError, HypothesisError, NumericalError, PositivityError
from qsphere.core.parabolic_evolver import (
    ConformalBranch,
    EvolverControls,
    RicciBranch,
    ScaledBranch,
    closed_form_w,
    evolve,
    rhs_conformal,
    rhs_conformal_m,
    rhs_conformal_w,
    rhs_ricci,
    rhs_ricci_w,
    round_closed_form_w,
)
from qsphere.core.prescribed_curvature import PowerCurvature, ZeroCurvature
from qsphere.core.ricci_flow_foliation import AxiGrid, round_metric, run_flow
from qsphere.core.sphere_ops import Field, SphereGrid
from qsphere.utils.fitting import observed_orders


def _perturbed(grid, amplitude=0.02):
    y = grid.ylm_real(2, 0)
    return Field(grid, 1.0 + amplitude * y / np.max(np.abs(y)))


class RightHandSideTests(unittest.TestCase):
    def setUp(self):
        self.grid = SphereGrid(16, 32)
        self.rbar = ZeroCurvature(self.grid)

    def test_unit_lapse_is_stationary_on_round_leaves(self):
        u = Field.constant(self.grid, 1.0)
        rhs = rhs_conformal(u, 2.0, RoundFoliation(self.grid), self.rbar)
        np.testing.assert_allclose(rhs.values, 0.0, atol=1e-13)

    def test_w_form_matches_u_form(self):
        fol = PowerFoliation(self.grid, 0.1, exponent=1.0)
        rbar = PowerCurvature(self.grid, 0.5, 3.0)
        u = _perturbed(self.grid)
        t = 1.7
        du = rhs_conformal(u, t, fol, rbar).values
        dw = rhs_conformal_w(u ** -2, t, fol, rbar).values
        np.testing.assert_allclose(dw, -2.0 * u.values ** -3 * du, atol=1e-8)

    def test_m_form_matches_u_form(self):
        fol = PowerFoliation(self.grid, 0.1, exponent=2.0)
        u = _perturbed(self.grid)
        t = 2.3
        w = u.values ** -2
        m = Field(self.grid, 0.5 * t * (1.0 - w))
        dw = -2.0 * u.values ** -3 * rhs_conformal(u, t, fol, self.rbar).values
        expected = 0.5 * (1.0 - w) - 0.5 * t * dw
        np.testing.assert_allclose(rhs_conformal_m(m, t, fol, self.rbar).values, expected, atol=1e-8)

    def test_ricci_round_background_matches_conformal(self):
        traj = run_flow(round_metric(AxiGrid(16)), 3.0)
        u = _perturbed(self.grid, 0.1)
        ricci = rhs_ricci(u, 1.5, traj, self.rbar).values
        conformal = rhs_conformal(u, 1.5, RoundFoliation(self.grid), self.rbar).values
        np.testing.assert_allclose(ricci, conformal, atol=1e-9)

    def test_ricci_w_form_matches_u_form(self):
        traj = run_flow(round_metric(AxiGrid(16)), 3.0)
        u = _perturbed(self.grid)
        du = rhs_ricci(u, 2.0, traj, self.rbar).values
        dw = rhs_ricci_w(u ** -2, 2.0, traj, self.rbar).values
        np.testing.assert_allclose(dw, -2.0 * u.values ** -3 * du, atol=1e-8)

    def test_nonpositive_lapse_rejected(self):
        values = np.ones(self.grid.shape)
        values[3, 4] = 0.0
        with self.assertRaises(PositivityError):
            rhs_conformal(Field(self.grid, values), 1.0, RoundFoliation(self.grid), self.rbar)

    def test_grid_mismatch_rejected(self):
        with self.assertRaises(GridError):
            ConformalBranch(RoundFoliation(self.grid), ZeroCurvature(SphereGrid(8, 16)))


class ScaledBranchTests(unittest.TestCase):
    def test_schwarzschild_horizon_is_stationary(self):
        grid = SphereGrid(8, 16)
        scaled = ScaledBranch(ConformalBranch(RoundFoliation(grid), ZeroCurvature(grid)))
        for t in (0.01, 0.5, 4.0):
            np.testing.assert_allclose(scaled.rhs(np.ones(grid.shape), t), 0.0, atol=1e-10)
        with self.assertRaises(NotImplementedError):
            scaled.rhs_w(np.ones(grid.shape), 1.0)


class EvolveTests(unittest.TestCase):
    def setUp(self):
        self.grid = SphereGrid(8, 16)
        self.branch = ConformalBranch(RoundFoliation(self.grid), ZeroCurvature(self.grid))

    def test_snapshot_rates_come_from_the_steps(self):
        c = 0.8
        record = evolve(self.branch, Field.constant(self.grid, c), 5.0, EvolverControls(ds=0.01))
        self.assertIsNotNone(record.u_dot)
        w = round_closed_form_w(record.times, c)
        expected = 0.5 * w ** -1.5 * (c ** -2 - 1.0) / record.times ** 2
        np.testing.assert_allclose(record.u_dot[:, 0, 0], expected, atol=1e-8)
        np.testing.assert_allclose(record.time_derivative(), record.u_dot)

    def test_single_step_run_still_has_rates(self):
        record = evolve(self.branch, Field.constant(self.grid, 0.8), 1.01, EvolverControls(ds=0.05))
        self.assertEqual(record.u_dot.shape, record.u.shape)
        self.assertTrue(np.all(np.isfinite(record.u_dot)))

    def test_rk4_converges_at_fourth_order(self):
        span = 0.8
        t_end = math.exp(span)
        for c in (0.5, 0.8, 0.9):
            errors = []
            for ds in (0.04, 0.02, 0.01):
                controls = EvolverControls(ds=ds, snapshot_every=int(round(span / ds)))
                record = evolve(self.branch, Field.constant(self.grid, c), t_end, controls)
                errors.append(float(np.max(np.abs(record.w[-1] - round_closed_form_w(t_end, c)))))
            for order in observed_orders(errors):
                self.assertGreaterEqual(order, 3.8, (c, errors))

    def test_closed_form_helpers(self):
        self.assertAlmostEqual(float(closed_form_w(2.0, 1.0)), 1.0)
        self.assertAlmostEqual(float(round_closed_form_w(4.0, 0.8)), 1.0 + 0.5625 / 4.0)

    def test_flat_space_stays_flat(self):
        record = evolve(self.branch, Field.constant(self.grid, 1.0), 10.0, EvolverControls(ds=0.02))
        np.testing.assert_allclose(record.u, 1.0, atol=1e-12)
        self.assertEqual(record.times[0], 1.0)
        self.assertEqual(record.times[-1], 10.0)

    def test_constant_lapse_follows_schwarzschild_family(self):
        c = 0.8
        record = evolve(self.branch, Field.constant(self.grid, c), 5.0, EvolverControls(ds=0.01))
        expected = round_closed_form_w(record.times, c)
        w_min, w_max = record.w_extrema()
        np.testing.assert_allclose(w_min, expected, atol=1e-8)
        np.testing.assert_allclose(w_max, expected, atol=1e-8)
        np.testing.assert_allclose(record.mean_mass(), -0.28125, atol=1e-8)

    def test_w_form_and_imex_agree_with_closed_form(self):
        c = 1.2
        for controls, tol in ((EvolverControls(ds=0.01, form="w"), 1e-9),
                              (EvolverControls(ds=0.01, stepper="imex"), 1e-4)):
            record = evolve(self.branch, Field.constant(self.grid, c), 4.0, controls)
            expected = round_closed_form_w(record.times, c)
            np.testing.assert_allclose(record.w[:, 0, 0], expected, atol=tol)

    def test_explicit_snapshot_times(self):
        controls = EvolverControls(ds=0.05, snapshot_times=[1.5, 2.0, 3.0])
        record = evolve(self.branch, Field.constant(self.grid, 1.0), 4.0, controls)
        np.testing.assert_allclose(record.times, [1.0, 1.5, 2.0, 3.0, 4.0])
        self.assertEqual(len(record.diagnostics), 5)
        self.assertEqual(record.provenance["stepper"], "rk4")

    def test_perturbed_lapse_relaxes(self):
        phi = _perturbed(self.grid, 0.1)
        record = evolve(self.branch, phi, 8.0, EvolverControls(ds=0.02, dealias=True))
        spread = [float(np.ptp(record.w[k])) for k in range(len(record))]
        self.assertLess(spread[-1], spread[0])
        self.assertTrue(np.all(np.isfinite(record.u)))

    def test_initial_lapse_above_admissibility_bound(self):
        rbar = PowerCurvature(self.grid, 3.0, 2.0)
        branch = ConformalBranch(RoundFoliation(self.grid), rbar)
        k = constant_K_conformal(branch.fol, rbar, 10.0)
        phi = Field.constant(self.grid, 1.0)
        with self.assertRaises(HypothesisError):
            evolve(branch, phi, 1.2, EvolverControls(ds=0.01), admissibility=k)
        record = evolve(branch, phi, 1.2, EvolverControls(ds=0.01, override_k=True), admissibility=k)
        self.assertAlmostEqual(record.times[-1], 1.2)

    def test_blow_up_is_reported(self):
        # t dw/dt = -1/2 - w reaches w = 0 at t = 3
        rbar = PowerCurvature(self.grid, 3.0, 2.0)
        branch = ConformalBranch(RoundFoliation(self.grid), rbar)
        with self.assertRaises(NumericalError):
            evolve(branch, Field.constant(self.grid, 1.0), 4.0, EvolverControls(ds=0.01))

    def test_nonpositive_initial_lapse(self):
        values = np.ones(self.grid.shape)
        values[0, 0] = -0.1
        with self.assertRaises(PositivityError):
            evolve(self.branch, Field(self.grid, values), 2.0, EvolverControls())


class RicciEvolveTests(unittest.TestCase):
    def test_round_ricci_background_reproduces_schwarzschild(self):
        grid = SphereGrid(8, 16)
        traj = run_flow(round_metric(AxiGrid(8)), 4.0)
        branch = RicciBranch(traj, ZeroCurvature(grid))
        record = evolve(branch, Field.constant(grid, 0.9), 4.0, EvolverControls(ds=0.01))
        expected = round_closed_form_w(record.times, 0.9)
        np.testing.assert_allclose(record.w[:, 0, 0], expected, atol=1e-7)
        self.assertEqual(record.branch_kind, "ricci")


if __name__ == "__main__":
    unittest.main()
