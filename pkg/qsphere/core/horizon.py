"""
Horizon boundary data by vanishing-epsilon limit.

The physical lapse blows up at t = 1, so each run integrates the scaled
variable u~(t) = sqrt(t/(t+1)) u(t+1) from t = eps with the constant start
phi_eps^{-2} = mean of the scaled envelopes at eps.  The ladder of eps
values is extrapolated to eps = 0 at common scaled times and mapped back
to the physical record on T = t + 1.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..config.settings import DEFAULT_EPS_LADDER, DEFAULT_ETA
from ..models.record import SolutionRecord
from ..models.scenario import EvolverControls
from ..utils.fitting import geometric_ratio, power_law_fit, richardson_extrapolate, richardson_step
from .bounds_envelopes import EnvelopePair, envelopes_scaled, scaled_initial_value
from .errors import ConfigError, HypothesisError, PositivityError
from .parabolic_evolver import ScaledBranch, evolve
from .sphere_ops import Field


logger = logging.getLogger(__name__)

SIGN_SAMPLES = 32
SLOPE_SNAPSHOTS = 5


class HorizonRun:
    """Physical record of a horizon construction plus the ladder it came from."""

    def __init__(self, record: SolutionRecord, levels: List[SolutionRecord], eps_ladder: Sequence[float],
                 phi_eps: Sequence[float], order: Optional[float], envelopes: EnvelopePair,
                 scaled_times: np.ndarray, w_scaled: np.ndarray, eta: float, eta_min: float):
        self.record = record
        self.levels = levels
        self.eps_ladder = list(eps_ladder)
        self.phi_eps = list(phi_eps)
        self.order = order
        self.envelopes = envelopes
        self.scaled_times = scaled_times
        self.w_scaled = w_scaled
        self.eta = eta
        self.eta_min = eta_min
        self.window_end = self._window_end()
        self.window_status = self._window_status()
        self.mass_bracket_passed = self._mass_bracket()
        self.h_slope = self._h_slope()

    def _inside(self) -> np.ndarray:
        flat = self.w_scaled.reshape(self.scaled_times.size, -1)
        return (flat.min(axis=1) > 1.0 - self.eta) & (flat.max(axis=1) < 1.0 / (1.0 - self.eta))

    def _window_end(self) -> Optional[float]:
        """Largest T0 with (1 - eta) < w~ < 1/(1 - eta) on every snapshot up to T0."""
        inside = self._inside()
        if not inside[0]:
            return None
        k = int(np.argmin(inside)) - 1 if not np.all(inside) else inside.size - 1
        return float(self.scaled_times[k] + 1.0)

    def _window_status(self) -> str:
        if self.window_end is not None:
            return "open"
        if self.eta <= self.eta_min:
            return f"empty: eta={self.eta:g} not above the leaf curvature deviation {self.eta_min:.3g}"
        return "empty: scaled lapse outside the window at the first snapshot"

    def _mass_bracket(self) -> Optional[bool]:
        """1 - eta (T-1)/(1-eta) <= 2m <= 1 + eta (T-1) on the eta window."""
        if self.window_end is None:
            return None
        eta = self.eta
        ok = True
        for k, t in enumerate(self.scaled_times):
            big_t = t + 1.0
            if big_t > self.window_end + 1e-12:
                break
            two_m = big_t - t * self.w_scaled[k]
            lower = 1.0 - eta * t / (1.0 - eta)
            upper = 1.0 + eta * t
            ok = ok and bool(np.all(two_m >= lower - 1e-12) and np.all(two_m <= upper + 1e-12))
        return ok

    def _h_slope(self):
        record = self.record
        branch = record.branch
        count = min(SLOPE_SNAPSHOTS, len(record))
        mean_h = [record.grid.mean(branch.mean_curvature(record.u[k], float(record.times[k])))
                  for k in range(count)]
        return power_law_fit(record.times[:count] - 1.0, mean_h)

    def level_differences(self) -> List[float]:
        w = list(self._level_w())
        return [float(np.max(np.abs(a - b))) for a, b in zip(w[:-1], w[1:])]

    def _level_w(self):
        for level in self.levels:
            idx = [level.index(t) for t in self.scaled_times]
            yield level.w[idx]

    def to_dict(self) -> Dict:
        return {
            "eps_ladder": self.eps_ladder,
            "phi_eps": self.phi_eps,
            "richardson_order": self.order,
            "level_differences": self.level_differences(),
            "eta": self.eta,
            "eta_min": self.eta_min,
            "window_end": self.window_end,
            "window_status": self.window_status,
            "mass_bracket_passed": self.mass_bracket_passed,
            "h_slope": self.h_slope.to_dict() if self.h_slope is not None else None,
            "w_scaled_min": float(np.min(self.w_scaled)),
            "w_scaled_max": float(np.max(self.w_scaled)),
        }


def _check_sign(base, t_end: float) -> None:
    for t in np.geomspace(1.0, t_end, SIGN_SAMPLES):
        gap = float(np.min(base.curvature_gap(float(t))))
        if not gap > 0.0:
            raise HypothesisError("leaf curvature above t^2 Rbar", float(t), gap)


def _common_times(eps_max: float, t_end: float, controls: EvolverControls) -> np.ndarray:
    span = t_end - 1.0
    if span <= eps_max:
        raise ConfigError(f"t_end={t_end} leaves no room after the largest epsilon {eps_max}")
    count = max(2, math.ceil(math.log(span / eps_max) / (controls.snapshot_every * controls.ds) - 1e-9))
    return np.geomspace(eps_max, span, count + 1)


def horizon_evolve(base, t_end: float, controls: EvolverControls,
                   eps_ladder: Sequence[float] = DEFAULT_EPS_LADDER, eta: float = DEFAULT_ETA,
                   threads: int = 1, provenance: Optional[Dict] = None) -> HorizonRun:
    """
    Run the epsilon ladder for ``base`` (a conformal or Ricci branch whose
    leaf curvature exceeds t^2 Rbar) and extrapolate to the horizon limit.
    """
    eps_ladder = [float(eps) for eps in eps_ladder]
    if len(eps_ladder) < 2 or any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise ConfigError("epsilon ladder must hold at least two strictly decreasing values")
    try:
        ratio = geometric_ratio(eps_ladder)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _check_sign(base, t_end)
    grid = base.grid
    common = _common_times(eps_ladder[0], t_end, controls)

    nodes = np.unique(np.concatenate((eps_ladder, common)))
    env = envelopes_scaled(base.envelope_coefficients(), nodes, eps_ladder[-1],
                           metadata={"branch": base.kind})
    starts = [scaled_initial_value(env, eps) for eps in eps_ladder]
    for eps, value in zip(eps_ladder, starts):
        if not value > 0.0:
            raise HypothesisError("scaled envelopes positive at epsilon", eps, value)
    phi_eps = [value ** -0.5 for value in starts]

    scaled = ScaledBranch(base)

    def run_level(k: int) -> SolutionRecord:
        eps = eps_ladder[k]
        times = [eps] + [float(t) for t in common if t > eps * (1.0 + 1e-12)]
        level_controls = controls.model_copy(update={"snapshot_times": times, "form": "u"})
        logger.info("Horizon level eps=%.4g: phi=%.6g", eps, phi_eps[k])
        return evolve(scaled, Field.constant(grid, phi_eps[k]), common[-1], level_controls,
                      t_start=eps, provenance={"eps": eps, "phi": phi_eps[k]})

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as executor:
        levels = list(executor.map(run_level, range(len(eps_ladder))))

    level_w = []
    level_rates = []
    for level in levels:
        idx = [level.index(float(t)) for t in common]
        level_w.append(level.w[idx])
        level_rates.append(level.u_dot[idx])
    w_scaled, order = richardson_extrapolate(level_w, ratio)
    low = float(np.min(w_scaled))
    if not low > 0.0:
        raise PositivityError(float(common[0]) + 1.0, low)

    big_t = common + 1.0
    u_scaled = w_scaled ** -0.5
    factor = np.sqrt(big_t / common)[:, None, None]
    t3 = common[:, None, None]
    if order is None:
        du_scaled = level_rates[-1]
    else:
        du_scaled = richardson_step(level_rates[-2], level_rates[-1], ratio, order)
    u = factor * u_scaled
    u_dot = factor * du_scaled - u_scaled / (2.0 * t3 * t3 * factor)

    w = u ** -2
    diagnostics = [
        {"t": float(big_t[k]), "min_w": float(np.min(w[k])), "max_w": float(np.max(w[k])),
         "min_w_scaled": float(np.min(w_scaled[k])), "max_w_scaled": float(np.max(w_scaled[k]))}
        for k in range(common.size)
    ]
    record = SolutionRecord(
        base.kind,
        grid,
        big_t,
        u,
        diagnostics=diagnostics,
        provenance={**(provenance or {}), **base.describe(), "horizon": True,
                    "eps_ladder": eps_ladder, "richardson_order": order},
        branch=base,
        u_dot=u_dot,
    )

    eta_min = float(np.max(np.abs(0.5 * base.curvature_gap(1.0) - 1.0)))
    if eta <= eta_min:
        logger.warning("eta=%.3g below the leaf curvature deviation %.3g; window may be empty", eta, eta_min)
    run = HorizonRun(record, levels, eps_ladder, phi_eps, order, env, common, w_scaled, eta, eta_min)
    if run.window_end is None:
        logger.warning("Mass bracket not evaluated, eta window %s", run.window_status)
    else:
        logger.info("Horizon run: eta window up to T=%.4g, order %s", run.window_end, order)
    return run
