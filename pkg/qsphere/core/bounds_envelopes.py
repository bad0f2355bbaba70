"""
Maximum-principle envelopes for w = u^{-2} and the admissibility constant K.

At a spatial extremum of w both branches reduce to the scalar comparison
equation dw/ds = P - lam w in s = ln t.  The lower envelope pairs the
smallest source with the largest rate, the upper envelope the reverse.
Both are integrated by one forward exponential sweep on a refinement of
the requested time grid, and the running rate integrals are kept so the
full inequalities with initial data can be assembled at any node.
"""

import logging
import math
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from ..config.settings import ENVELOPE_DENSITY, ENVELOPE_TOL, HORIZON_START_FACTOR
from ..utils.io import write_csv, write_json
from ..utils.sweep import exponent_accumulator, exponential_sweep, refine_grid
from .conformal_foliation import ConformalFoliation, curvature_values, eval_f
from .errors import NumericalError
from .prescribed_curvature import PrescribedCurvature
from .ricci_flow_foliation import RicciFlowTrajectory, broadcast


logger = logging.getLogger(__name__)

# (P_lower, lam_lower, P_upper, lam_upper) at one time
Coefficients = Tuple[float, float, float, float]


class EnvelopePair:
    """Lower/upper envelopes and their rate integrals on a time grid."""

    def __init__(self, times: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                 exp_lower: np.ndarray, exp_upper: np.ndarray, metadata: Dict):
        self.times = np.asarray(times, dtype=float)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.exp_lower = np.asarray(exp_lower, dtype=float)
        self.exp_upper = np.asarray(exp_upper, dtype=float)
        self.metadata = metadata
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise NumericalError("envelope integrand is not finite")

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"t={t} is not an envelope node")
        return k

    def value_at(self, t: float) -> Tuple[float, float]:
        """(lower, upper) at t, linear in ln t between nodes."""
        s = math.log(t)
        grid = np.log(self.times)
        return float(np.interp(s, grid, self.lower)), float(np.interp(s, grid, self.upper))

    def ordered(self, tol: float = ENVELOPE_TOL) -> bool:
        return bool(np.all(self.lower <= self.upper + tol))

    def to_dict(self) -> Dict:
        return {
            "times": self.times.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "exp_lower": self.exp_lower.tolist(),
            "exp_upper": self.exp_upper.tolist(),
            "metadata": self.metadata,
        }


class AdmissibilityK:
    """K = max(0, sup_t J(t)) with J(t) = -delta_lower(t) exp(E_lower(t))."""

    def __init__(self, value: float, t_dagger: float, unsaturated: bool,
                 times: np.ndarray, trace: np.ndarray):
        self.value = float(value)
        self.t_dagger = float(t_dagger)
        self.unsaturated = bool(unsaturated)
        self.times = np.asarray(times, dtype=float)
        self.trace = np.asarray(trace, dtype=float)

    @property
    def phi_bound(self) -> float:
        """Upper bound 1/sqrt(K) on the initial lapse; infinite when K = 0."""
        return math.inf if self.value <= 0.0 else 1.0 / math.sqrt(self.value)

    def to_dict(self) -> Dict:
        return {
            "K": self.value,
            "t_dagger": self.t_dagger,
            "unsaturated": self.unsaturated,
            "phi_bound": None if self.value <= 0.0 else self.phi_bound,
            "times": self.times.tolist(),
            "trace": self.trace.tolist(),
        }


# ----------------------------------------------------------------------
# Comparison coefficients
# ----------------------------------------------------------------------

def conformal_coefficients(fol: ConformalFoliation, rbar: PrescribedCurvature) -> Callable[[float], Coefficients]:
    """P = t S, lam = t rho with S = (R_f - t^2 Rbar)/(2 t^2 a), rho = 2 a_t / a + 3 a."""
    grid = fol.grid

    def coefficients(t: float) -> Coefficients:
        f, ft, ftt = eval_f(fol, t)
        a = 1.0 / t + ft.values
        a_t = -1.0 / t ** 2 + ftt.values
        gap = curvature_values(grid, f.values) - t * t * rbar._values(t)
        source = gap / (2.0 * t * a)
        rate = t * (2.0 * a_t / a + 3.0 * a)
        return float(np.min(source)), float(np.max(rate)), float(np.max(source)), float(np.min(rate))

    return coefficients


def ricci_coefficients(traj: RicciFlowTrajectory, rbar: PrescribedCurvature) -> Callable[[float], Coefficients]:
    """P = (R - t^2 Rbar)/2, lam = t^2 |M|^2 / 2 + 1."""
    grid = rbar.grid

    def coefficients(t: float) -> Coefficients:
        sample = traj.at(t)
        source = 0.5 * (broadcast(sample.R, grid) - t * t * rbar._values(t))
        rate = 0.5 * t * t * sample.msq + 1.0
        return float(np.min(source)), float(np.max(rate)), float(np.max(source)), float(np.min(rate))

    return coefficients


def scaled_coefficients(base: Callable[[float], Coefficients]) -> Callable[[float], Coefficients]:
    """
    Coefficients for w~(t) = (T/t) w(T), T = t + 1:
    P~ = P(T) and lam~ = (t lam(T) + 1) / T.
    """

    def coefficients(t: float) -> Coefficients:
        big_t = t + 1.0
        p_lo, lam_lo, p_hi, lam_hi = base(big_t)
        return p_lo, (t * lam_lo + 1.0) / big_t, p_hi, (t * lam_hi + 1.0) / big_t

    return coefficients


# ----------------------------------------------------------------------
# Sweeps
# ----------------------------------------------------------------------

def _node_grid(t_grid: Sequence[float], start: float) -> np.ndarray:
    times = np.unique(np.concatenate(([start], np.asarray(t_grid, dtype=float))))
    return times[times >= start - 1e-15]


def sweep_envelopes(coefficients: Callable[[float], Coefficients], t_grid: Sequence[float],
                    start: float = 1.0, quasi_steady: bool = False,
                    density: int = ENVELOPE_DENSITY, metadata: Optional[Dict] = None) -> EnvelopePair:
    """
    Integrate both envelopes from ``start``; the returned pair holds the
    values at the nodes of ``t_grid`` (plus ``start``).

    With ``quasi_steady`` the sweep starts from delta = P / lam instead of 0.
    """
    nodes = _node_grid(t_grid, start)
    s_nodes = np.log(nodes)
    s_fine = refine_grid(s_nodes, density)
    rows = np.array([coefficients(float(t)) for t in np.exp(s_fine)])
    if not np.all(np.isfinite(rows)):
        raise NumericalError("envelope integrand is not finite")
    p_lo, lam_lo, p_hi, lam_hi = rows.T
    start_lo = p_lo[0] / lam_lo[0] if quasi_steady else 0.0
    start_hi = p_hi[0] / lam_hi[0] if quasi_steady else 0.0
    lower = exponential_sweep(s_fine, p_lo, lam_lo, start_lo)
    upper = exponential_sweep(s_fine, p_hi, lam_hi, start_hi)
    exp_lo = exponent_accumulator(s_fine, lam_lo)
    exp_hi = exponent_accumulator(s_fine, lam_hi)
    pick = np.arange(nodes.size) * max(1, int(density))
    info = {"rule": "exponential-sweep", "density": int(density), "start": float(start),
            "quasi_steady": bool(quasi_steady)}
    info.update(metadata or {})
    return EnvelopePair(nodes, lower[pick], upper[pick], exp_lo[pick], exp_hi[pick], info)


def envelopes_conformal(fol: ConformalFoliation, rbar: PrescribedCurvature, t_grid: Sequence[float],
                        density: int = ENVELOPE_DENSITY) -> EnvelopePair:
    env = sweep_envelopes(conformal_coefficients(fol, rbar), t_grid, density=density,
                          metadata={"branch": "conformal", "foliation": fol.label, "rbar": rbar.label})
    logger.debug("Conformal envelopes on %d nodes", env.times.size)
    return env


def envelopes_ricci(traj: RicciFlowTrajectory, rbar: PrescribedCurvature, t_grid: Sequence[float],
                    density: int = ENVELOPE_DENSITY) -> EnvelopePair:
    env = sweep_envelopes(ricci_coefficients(traj, rbar), t_grid, density=density,
                          metadata={"branch": "ricci", "trajectory": traj.label, "rbar": rbar.label})
    logger.debug("Ricci envelopes on %d nodes", env.times.size)
    return env


def envelopes_scaled(base: Callable[[float], Coefficients], t_grid: Sequence[float], eps_min: float,
                     density: int = ENVELOPE_DENSITY, metadata: Optional[Dict] = None) -> EnvelopePair:
    """Envelopes of the horizon-scaled problem, started quasi-steadily well below eps_min."""
    start = eps_min * HORIZON_START_FACTOR
    info = {"scaled": True}
    info.update(metadata or {})
    return sweep_envelopes(scaled_coefficients(base), t_grid, start=start, quasi_steady=True,
                           density=density, metadata=info)


# ----------------------------------------------------------------------
# Admissibility constant
# ----------------------------------------------------------------------

def admissibility_from(env: EnvelopePair) -> AdmissibilityK:
    trace = -env.lower * np.exp(env.exp_lower)
    if not np.all(np.isfinite(trace)):
        raise NumericalError("admissibility supremand is not finite")
    k = int(np.argmax(trace))
    value = max(0.0, float(trace[k]))
    if value <= 0.0:
        result = AdmissibilityK(0.0, float(env.times[0]), False, env.times, trace)
    else:
        unsaturated = k == trace.size - 1
        result = AdmissibilityK(value, float(env.times[k]), unsaturated, env.times, trace)
        if unsaturated:
            logger.warning("K supremand still increasing at t_max=%.4g; K=%.6g is a lower estimate",
                           env.times[-1], value)
    logger.info("Admissibility constant K=%.6g (t_dagger=%.4g)", result.value, result.t_dagger)
    return result


def _k_grid(t_max: float, samples: int) -> np.ndarray:
    return np.geomspace(1.0, t_max, samples)


def constant_K_conformal(fol: ConformalFoliation, rbar: PrescribedCurvature, t_max: float,
                         samples: int = 128) -> AdmissibilityK:
    return admissibility_from(envelopes_conformal(fol, rbar, _k_grid(t_max, samples)))


def constant_K_ricci(traj: RicciFlowTrajectory, rbar: PrescribedCurvature, t_max: float,
                     samples: int = 128) -> AdmissibilityK:
    return admissibility_from(envelopes_ricci(traj, rbar, _k_grid(t_max, samples)))


# ----------------------------------------------------------------------
# Record check
# ----------------------------------------------------------------------

class EnvelopeViolation:
    """Worst envelope violations of one record."""

    def __init__(self, times: np.ndarray, lower_full: np.ndarray, upper_full: np.ndarray,
                 lower_simple: np.ndarray, upper_simple: np.ndarray, tol: float):
        self.times = times
        self.lower_full = lower_full
        self.upper_full = upper_full
        self.lower_simple = lower_simple
        self.upper_simple = upper_simple
        self.tol = tol

    @property
    def worst_lower(self) -> float:
        return float(np.max(self.lower_full))

    @property
    def worst_upper(self) -> float:
        return float(np.max(self.upper_full))

    @property
    def worst(self) -> float:
        return max(self.worst_lower, self.worst_upper)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def to_dict(self) -> Dict:
        return {
            "worst_lower": self.worst_lower,
            "worst_upper": self.worst_upper,
            "worst_lower_simplified": float(np.max(self.lower_simple)),
            "worst_upper_simplified": float(np.max(self.upper_simple)),
            "tol": self.tol,
            "passed": self.passed,
        }


def envelope_check(record, env: EnvelopePair, tol: float = ENVELOPE_TOL) -> EnvelopeViolation:
    """
    Per-snapshot violations of

        delta_lo(t) + (w_min(t0) - delta_lo(t0)) e^{-(E_lo(t) - E_lo(t0))} <= w
        w <= delta_hi(t) + (w_max(t0) - delta_hi(t0)) e^{-(E_hi(t) - E_hi(t0))}

    with t0 the first snapshot, plus the simplified delta-only forms
    (w >= delta_lo is implied when t0 is the envelope start; w <= delta_hi
    is informational).
    """
    times = np.asarray(record.times, dtype=float)
    idx = np.array([env.index(t) for t in times])
    w = record.w
    w_min = np.min(w.reshape(times.size, -1), axis=1)
    w_max = np.max(w.reshape(times.size, -1), axis=1)
    k0 = idx[0]
    lo = env.lower[idx] + (w_min[0] - env.lower[k0]) * np.exp(-(env.exp_lower[idx] - env.exp_lower[k0]))
    hi = env.upper[idx] + (w_max[0] - env.upper[k0]) * np.exp(-(env.exp_upper[idx] - env.exp_upper[k0]))
    report = EnvelopeViolation(
        times,
        np.maximum(lo - w_min, 0.0),
        np.maximum(w_max - hi, 0.0),
        np.maximum(env.lower[idx] - w_min, 0.0),
        np.maximum(w_max - env.upper[idx], 0.0),
        tol,
    )
    if report.passed:
        logger.info("Envelope check passed (worst %.3e)", report.worst)
    else:
        logger.warning("Envelope check failed: lower %.3e upper %.3e", report.worst_lower, report.worst_upper)
    return report


# ----------------------------------------------------------------------
# Exports
# ----------------------------------------------------------------------

def envelope_trace_csv(env: EnvelopePair, path) -> None:
    rows = zip(env.times, env.lower, env.upper, env.exp_lower, env.exp_upper)
    write_csv(path, ["t", "lower", "upper", "exp_lower", "exp_upper"], rows)


def admissibility_json(k: AdmissibilityK, path) -> None:
    write_json(path, k.to_dict())


def closed_form_round(times: Sequence[float]) -> np.ndarray:
    """(t - 1)/t, both envelopes of the round background with Rbar = 0."""
    t = np.asarray(times, dtype=float)
    return (t - 1.0) / t


def scaled_initial_value(env: EnvelopePair, eps: float) -> float:
    """phi_eps^{-2} = (lower + upper)/2 at the scaled start eps."""
    lower, upper = env.value_at(eps)
    return 0.5 * (lower + upper)

