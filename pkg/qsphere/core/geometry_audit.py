"""
Post-processing audits of solved lapse records.

Everything here reads an immutable SolutionRecord with its branch object
attached and recomputes geometric quantities of the 3-metric
u^2 dt^2 + t^2 g(t) independently of the stepper.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config.settings import (
    ADM_CONSTANT_TAIL_TOL,
    ADM_FIT_MIN_R2,
    ADM_MIN_T_END,
    CURVATURE_SLOPE_MAX,
    DECAY_SLOPE_MAX,
    DRIFT_TOL,
    FLAT_NORM_FLOOR,
    MASS_BOUND_TOL,
    TAIL_FIT_MIN_R2,
)
from ..models.record import SolutionRecord
from ..utils.fitting import line_fit, observed_orders, power_law_fit, stencil_derivative
from .errors import ConfigError, CoverageError, NumericalError
from .sphere_ops import Field


logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi


def _branch(record: SolutionRecord):
    if record.branch is None:
        raise ConfigError("record has no branch inputs attached; rebuild them from its config")
    return record.branch


def _mean_curvature_rate(record: SolutionRecord) -> np.ndarray:
    """dH/dt per snapshot: chain rule on the step-resolved du/dt, else differences of H in ln t."""
    branch = _branch(record)
    if record.u_dot is not None:
        return np.stack([branch.mean_curvature_dt(record.u[k], record.u_dot[k], float(t))
                         for k, t in enumerate(record.times)])
    h = np.stack([branch.mean_curvature(record.u[k], float(t)) for k, t in enumerate(record.times)])
    return stencil_derivative(np.log(record.times), h) / record.times[:, None, None]


def extrinsic_curvature(record: SolutionRecord, t: float) -> Tuple[Field, Field]:
    """Mean curvature H and |A|^2 of the leaf at snapshot time t."""
    branch = _branch(record)
    k = record.index(t)
    u = record.u[k]
    t = float(record.times[k])
    return Field(record.grid, branch.mean_curvature(u, t)), Field(record.grid, branch.second_form_sq(u, t))


# ----------------------------------------------------------------------
# Scalar curvature reconstruction
# ----------------------------------------------------------------------

class CurvatureAudit:
    """Reconstructed Rbar against the prescribed one, per snapshot."""

    def __init__(self, times: np.ndarray, H: np.ndarray, Asq: np.ndarray, R_rec: np.ndarray,
                 errors_inf: np.ndarray, errors_l2: np.ndarray):
        self.times = times
        self.H = H
        self.Asq = Asq
        self.R_rec = R_rec
        self.errors_inf = errors_inf
        self.errors_l2 = errors_l2
        self.order: Optional[List[Optional[float]]] = None
        if not (np.all(np.isfinite(errors_inf)) and np.all(np.isfinite(errors_l2))):
            raise NumericalError("reconstructed scalar curvature is not finite")

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors_inf))

    def to_dict(self) -> Dict:
        return {
            "max_error_inf": self.max_error,
            "max_error_l2": float(np.max(self.errors_l2)),
            "order": self.order,
            "snapshots": len(self.times),
        }

    def rows(self):
        return zip(self.times, self.errors_inf, self.errors_l2)


def reconstruct_Rbar(record: SolutionRecord) -> CurvatureAudit:
    """
    Rbar_rec = -(2/u) dH/dt - (2/u) Lap u - |A|^2 + R - H^2 on every snapshot,
    with Lap and R those of the leaf t^2 g(t).
    """
    if len(record) < 3:
        raise NumericalError("curvature reconstruction needs at least three snapshots")
    branch = _branch(record)
    grid = record.grid
    rate = _mean_curvature_rate(record)
    H = np.empty_like(record.u)
    Asq = np.empty_like(record.u)
    R_rec = np.empty_like(record.u)
    errors_inf = np.empty(len(record))
    errors_l2 = np.empty(len(record))
    for k, t in enumerate(record.times):
        t = float(t)
        u = record.u[k]
        H[k] = branch.mean_curvature(u, t)
        Asq[k] = branch.second_form_sq(u, t)
        R_rec[k] = (-2.0 / u * rate[k] - 2.0 / u * branch.leaf_laplacian(u, t)
                    - Asq[k] + branch.leaf_curvature(t) - H[k] ** 2)
        error = R_rec[k] - branch.rbar_values(t)
        errors_inf[k] = np.max(np.abs(error))
        errors_l2[k] = math.sqrt(grid.integrate(error ** 2))
    audit = CurvatureAudit(record.times, H, Asq, R_rec, errors_inf, errors_l2)
    logger.info("Rbar reconstruction: max error %.3e over %d snapshots", audit.max_error, len(record))
    return audit


def attach_orders(audits: Sequence[CurvatureAudit], ratio: float = 2.0) -> Optional[List[Optional[float]]]:
    """Observed orders of the max errors along a refinement ladder (three levels or more)."""
    if len(audits) < 3:
        return None
    orders = observed_orders([audit.max_error for audit in audits], ratio)
    audits[-1].order = orders
    return orders


def curvature_proxy(record: SolutionRecord) -> np.ndarray:
    """
    Per-snapshot bound on the 3-curvature from the Gauss and normal Ricci
    combinations: max(|R - H^2 + |A|^2| / 2, |-(1/u) dH/dt - (1/u) Lap u - |A|^2|).
    """
    branch = _branch(record)
    rate = _mean_curvature_rate(record)
    out = np.empty(len(record))
    for k, t in enumerate(record.times):
        t = float(t)
        u = record.u[k]
        H = branch.mean_curvature(u, t)
        Asq = branch.second_form_sq(u, t)
        tangential = np.abs(branch.leaf_curvature(t) - H ** 2 + Asq) / 2.0
        normal = np.abs(-rate[k] / u - branch.leaf_laplacian(u, t) / u - Asq)
        out[k] = max(float(np.max(tangential)), float(np.max(normal)))
    return out


# ----------------------------------------------------------------------
# Hawking and ADM mass
# ----------------------------------------------------------------------

class HawkingMass:
    def __init__(self, t: float, reduced: float, defining: float, value: float):
        self.t = t
        self.reduced = reduced
        self.defining = defining
        self.value = value

    def to_dict(self) -> Dict:
        return {"t": self.t, "reduced": self.reduced, "defining": self.defining, "value": self.value}


def _reduced_formula_holds(branch) -> bool:
    return branch.kind == "ricci" or branch.is_round()


def hawking_mass(record: SolutionRecord, t: float) -> HawkingMass:
    """
    sqrt(A/16 pi)(1 - (1/16 pi) int H^2 dmu) and the reduced average
    (1/4 pi) int m dsigma.  ``value`` is the reduced one where it is
    exact (Ricci branch, round conformal leaves), the defining one otherwise.
    """
    branch = _branch(record)
    grid = record.grid
    k = record.index(t)
    t = float(record.times[k])
    u = record.u[k]
    density = branch.area_density(t)
    area = grid.integrate(density)
    willmore = grid.integrate(branch.mean_curvature(u, t) ** 2 * density)
    defining = math.sqrt(area / (16.0 * math.pi)) * (1.0 - willmore / (16.0 * math.pi))
    reduced = grid.integrate(record.m[k]) / FOUR_PI
    value = reduced if _reduced_formula_holds(branch) else defining
    return HawkingMass(t, reduced, defining, value)


def hawking_series(record: SolutionRecord) -> np.ndarray:
    return np.array([hawking_mass(record, float(t)).value for t in record.times])


class DriftReport:
    """Finite-difference dm_H/dt against the drift integral, per snapshot interval."""

    def __init__(self, times: np.ndarray, hawking: np.ndarray, lhs: np.ndarray, rhs: np.ndarray,
                 rbar_nonnegative: bool):
        self.times = times
        self.hawking = hawking
        self.lhs = lhs
        self.rhs = rhs
        self.rbar_nonnegative = rbar_nonnegative

    @property
    def residuals(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))

    @property
    def min_increment(self) -> float:
        return float(np.min(np.diff(self.hawking)))

    @property
    def monotone(self) -> Optional[bool]:
        if not self.rbar_nonnegative:
            return None
        return self.min_increment >= -DRIFT_TOL

    def to_dict(self) -> Dict:
        return {
            "max_residual": self.max_residual,
            "min_increment": self.min_increment,
            "monotone": self.monotone,
            "rbar_nonnegative": self.rbar_nonnegative,
            "intervals": len(self.lhs),
        }


def _drift_integrand(record: SolutionRecord, k: int) -> float:
    branch = record.branch
    t = float(record.times[k])
    u = record.u[k]
    w = record.w[k]
    integrand = (w * branch.grad_norm_sq(u, t) + 0.5 * t * t * branch.hessian_norm_sq(t) * w
                 + 0.5 * t * t * branch.rbar_values(t))
    return record.grid.integrate(integrand) / (8.0 * math.pi)


def hawking_drift_check(record: SolutionRecord) -> Optional[DriftReport]:
    """
    dm_H/dt = (1/8 pi) int w |grad u|^2 + (t^2/2)|M|^2 w + (t^2/2) Rbar dsigma,
    checked interval by interval.  Only defined where the reduced Hawking
    mass is exact; returns None elsewhere.
    """
    branch = _branch(record)
    if not _reduced_formula_holds(branch):
        logger.info("Hawking drift identity not applicable to non-round conformal leaves")
        return None
    if len(record) < 2:
        raise NumericalError("drift check needs at least two snapshots")
    hawking = hawking_series(record)
    integrand = np.array([_drift_integrand(record, k) for k in range(len(record))])
    dt = np.diff(record.times)
    lhs = np.diff(hawking) / dt
    rhs = 0.5 * (integrand[:-1] + integrand[1:])
    report = DriftReport(record.times, hawking, lhs, rhs, branch.rbar.is_nonnegative(record.times))
    if report.monotone is False:
        logger.warning("Hawking mass decreased by %.3e on an interval", -report.min_increment)
    logger.info("Hawking drift: max residual %.3e", report.max_residual)
    return report


class MassReport:
    """Hawking series, drift check and the ADM tail fit m(t) = m_inf + c/t."""

    def __init__(self, times: np.ndarray, mean_mass: np.ndarray, hawking: np.ndarray,
                 drift: Optional[DriftReport], fit, window: Tuple[float, float], uncertainty: float,
                 flux_gap: float, case: str = "tail-fit", m_inf: Optional[float] = None):
        self.times = times
        self.mean_mass = mean_mass
        self.hawking = hawking
        self.drift = drift
        self.fit = fit
        self.window = window
        self.case = case
        self.m_inf = fit.intercept if m_inf is None else m_inf
        self.c = fit.slope
        self.r2 = fit.r2
        self.uncertainty = uncertainty
        # a constant tail has no 1/t term for R^2 to measure
        self.poor_fit = case == "tail-fit" and fit.r2 < ADM_FIT_MIN_R2
        self.flux_gap = flux_gap
        self.lower_bound: Optional[Dict] = None

    def to_dict(self) -> Dict:
        return {
            "case": self.case,
            "m_inf": self.m_inf,
            "c": self.c,
            "r2": self.r2,
            "uncertainty": self.uncertainty,
            "poor_fit": self.poor_fit,
            "window": list(self.window),
            "hawking_at_end": float(self.hawking[-1]),
            "flux_gap": self.flux_gap,
            "drift": self.drift.to_dict() if self.drift is not None else None,
            "lower_bound": self.lower_bound,
        }

    def rows(self):
        lhs = [None] + list(self.drift.lhs) if self.drift is not None else [None] * len(self.times)
        rhs = [None] + list(self.drift.rhs) if self.drift is not None else [None] * len(self.times)
        return zip(self.times, self.mean_mass, self.hawking, lhs, rhs)


MASS_COLUMNS = ["t", "mean_m", "hawking_mass", "drift_lhs", "drift_rhs"]


def _require_range(record: SolutionRecord) -> None:
    t_end = float(record.times[-1])
    if t_end < ADM_MIN_T_END:
        raise CoverageError(t_end, ADM_MIN_T_END, math.inf)


def _tail_window(times: np.ndarray) -> np.ndarray:
    window = times >= times[-1] / 10.0
    if np.count_nonzero(window) < 2:
        window = np.zeros(times.size, dtype=bool)
        window[-2:] = True
    return window


def adm_mass(record: SolutionRecord) -> MassReport:
    """Tail fit of the sphere-averaged mass aspect against 1/t on the last decade."""
    _require_range(record)
    branch = _branch(record)
    times = record.times
    mean_mass = record.mean_mass()
    window = _tail_window(times)
    tail = mean_mass[window]
    fit = line_fit(1.0 / times[window], tail)
    spread = float(np.ptp(tail))
    if spread <= ADM_CONSTANT_TAIL_TOL * max(1.0, float(np.max(np.abs(tail)))):
        # mean mass settled: the last sample stands for the limit
        case, m_inf, uncertainty = "constant", float(tail[-1]), spread
    else:
        case, m_inf = "tail-fit", None
        uncertainty = fit.intercept_stderr if fit.n > 2 and fit.intercept_stderr > 0.0 else spread
    gaps = [abs(record.grid.integrate(branch.flux_correction(record.u[k], float(times[k])))) / FOUR_PI
            for k in np.flatnonzero(window)]
    report = MassReport(
        times,
        mean_mass,
        hawking_series(record),
        hawking_drift_check(record),
        fit,
        (float(times[window][0]), float(times[-1])),
        float(uncertainty),
        float(max(gaps)),
        case=case,
        m_inf=m_inf,
    )
    if report.poor_fit:
        logger.warning("ADM tail fit is poor (R^2 = %.4f)", report.r2)
    logger.info("ADM mass %.8g +/- %.2g (%s, flux gap %.2e)", report.m_inf, report.uncertainty, report.case,
                report.flux_gap)
    return report


def mass_lower_bound_check(record: SolutionRecord, report: MassReport) -> Dict:
    """m_ADM >= 1/2 for horizon runs with Rbar >= 0 on the sampled times."""
    branch = _branch(record)
    if not record.provenance.get("horizon"):
        verdict = {"verdict": "not-applicable", "reason": "not a horizon run"}
    elif not branch.rbar.is_nonnegative(record.times):
        verdict = {"verdict": "not-applicable", "reason": "Rbar takes negative values"}
    else:
        bound = 0.5 - report.uncertainty - MASS_BOUND_TOL
        verdict = {"verdict": "pass" if report.m_inf >= bound else "fail", "m_inf": report.m_inf,
                   "bound": bound}
    report.lower_bound = verdict
    if verdict["verdict"] == "fail":
        logger.warning("ADM mass %.6g below the horizon bound 1/2", report.m_inf)
    return verdict


# ----------------------------------------------------------------------
# Asymptotic flatness
# ----------------------------------------------------------------------

class DecayFit:
    def __init__(self, name: str, slope_max: float, times: np.ndarray, norms: np.ndarray):
        self.name = name
        self.slope_max = slope_max
        self.fit = None
        window = _tail_window(times)
        if float(np.max(norms[window])) <= FLAT_NORM_FLOOR:
            self.verdict = "identically flat"
            return
        self.fit = power_law_fit(times[window], norms[window], floor=FLAT_NORM_FLOOR)
        if self.fit is None:
            self.verdict = "indeterminate"
        else:
            self.verdict = "pass" if self.fit.slope <= slope_max else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass", "identically flat")

    @property
    def poor_fit(self) -> bool:
        return self.fit is not None and self.fit.r2 < TAIL_FIT_MIN_R2

    def to_dict(self) -> Dict:
        return {
            "verdict": self.verdict,
            "slope": self.fit.slope if self.fit is not None else None,
            "r2": self.fit.r2 if self.fit is not None else None,
            "slope_max": self.slope_max,
            "poor_fit": self.poor_fit,
        }


class FlatnessReport:
    def __init__(self, times: np.ndarray, norms: Dict[str, np.ndarray], fits: Dict[str, DecayFit]):
        self.times = times
        self.norms = norms
        self.fits = fits

    @property
    def passed(self) -> bool:
        return all(fit.passed for fit in self.fits.values())

    def to_dict(self) -> Dict:
        return {name: fit.to_dict() for name, fit in self.fits.items()}

    def rows(self):
        columns = [self.norms[name] for name in FLATNESS_NORMS]
        return zip(self.times, *columns)


FLATNESS_NORMS = ["one_minus_w", "t_du_dt", "grad_u", "hess_u", "curvature"]


def flatness_report(record: SolutionRecord) -> FlatnessReport:
    """
    Sup norms of 1 - u^{-2}, t du/dt, grad u and Hess u (round metric)
    fitted against t^{-1}, and the curvature proxy against t^{-3}.
    """
    _require_range(record)
    grid = record.grid
    times = record.times
    u_t = record.time_derivative()
    grad = np.empty(len(record))
    hess = np.empty(len(record))
    for k in range(len(record)):
        u = record.u[k]
        grad[k] = math.sqrt(float(np.max(grid.grad_norm_sq(u))))
        h_tt, h_tp, h_pp = grid.hessian(u)
        hess[k] = math.sqrt(float(np.max(h_tt ** 2 + 2.0 * h_tp ** 2 + h_pp ** 2)))
    norms = {
        "one_minus_w": np.max(np.abs(1.0 - record.w).reshape(len(record), -1), axis=1),
        "t_du_dt": np.max(np.abs(times[:, None, None] * u_t).reshape(len(record), -1), axis=1),
        "grad_u": grad,
        "hess_u": hess,
        "curvature": curvature_proxy(record),
    }
    fits = {name: DecayFit(name, CURVATURE_SLOPE_MAX if name == "curvature" else DECAY_SLOPE_MAX,
                           times, values)
            for name, values in norms.items()}
    report = FlatnessReport(times, norms, fits)
    for fit in fits.values():
        if fit.poor_fit:
            logger.warning("Decay fit of %s is poor (R^2 = %.3f)", fit.name, fit.fit.r2)
    logger.info("Flatness: %s", ", ".join(f"{name}={fit.verdict}" for name, fit in fits.items()))
    return report
