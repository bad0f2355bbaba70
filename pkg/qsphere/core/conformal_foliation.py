"""
Conformally round foliations g(t) = exp(2 f(t, .)) sigma.

Each foliation evaluates f and its first two t-derivatives on a sphere
grid; the leaf curvature and Laplacian follow from 2-D conformal
covariance.  ``hypothesis_report`` gathers numerical evidence for the
integrability and decay conditions that the existence and asymptotic
flatness results require.
"""

import json
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.interpolate import PchipInterpolator

from ..config.settings import DECAY_SLOPE_MAX, FLAT_NORM_FLOOR, TAIL_FIT_MIN_R2
from ..utils.fitting import power_law_fit, stencil_derivative, tail_integral
from ..utils.io import read_qsf, write_json, write_qsf
from ..utils.sweep import exponential_sweep
from .errors import CoverageError, GridError, HypothesisError
from .prescribed_curvature import PrescribedCurvature
from .sphere_ops import Field, SphereGrid


logger = logging.getLogger(__name__)


class ConformalFoliation:
    """
    Base class for conformal factors f(t, x).

    Subclasses implement ``_derivatives(t)`` returning arrays
    (f, df/dt, d2f/dt2).  Instances are immutable.
    """

    kind = "analytic-preset"
    preset = "base"

    def __init__(self, grid: SphereGrid, label: Optional[str] = None):
        self.grid = grid
        self.label = label or self.preset

    @property
    def t_range(self) -> Tuple[float, float]:
        return 1.0, math.inf

    def _derivatives(self, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def raw(self, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unchecked (f, f_t, f_tt) arrays; raises only on range errors."""
        t_min, t_max = self.t_range
        if t < t_min - 1e-12 or t > t_max + 1e-12:
            raise CoverageError(t, t_min, t_max)
        return self._derivatives(float(t))

    def is_round(self) -> bool:
        return False

    def describe(self) -> dict:
        return {"kind": self.kind, "preset": self.preset, "label": self.label}


class RoundFoliation(ConformalFoliation):
    kind = "round"
    preset = "round"

    def _derivatives(self, t):
        zero = np.zeros(self.grid.shape)
        return zero, zero.copy(), zero.copy()

    def is_round(self) -> bool:
        return True


class ConstantFoliation(ConformalFoliation):
    """f = c, constant in space and time."""

    preset = "constant"

    def __init__(self, grid: SphereGrid, value: float, label: Optional[str] = None):
        super().__init__(grid, label)
        self.value = float(value)

    def _derivatives(self, t):
        return np.full(self.grid.shape, self.value), np.zeros(self.grid.shape), np.zeros(self.grid.shape)

    def describe(self) -> dict:
        return {**super().describe(), "value": self.value}


def _profile(grid: SphereGrid, amplitude: float, degree: int, order: int,
             profile: Optional[Field]) -> np.ndarray:
    if profile is not None:
        if profile.grid != grid:
            raise GridError("profile field lives on a different grid")
        return amplitude * profile.values
    shape = grid.ylm_real(degree, order)
    return amplitude * shape / np.max(np.abs(shape))


class PowerFoliation(ConformalFoliation):
    """
    f = A(x) t^{-p}.

    By default A is ``amplitude`` times the real Y_l^m scaled to unit sup norm.
    """

    preset = "power"

    def __init__(self, grid: SphereGrid, amplitude: float, exponent: float = 1.0,
                 degree: int = 2, order: int = 0, profile: Optional[Field] = None,
                 label: Optional[str] = None):
        super().__init__(grid, label)
        if exponent < 1.0:
            raise ValueError("decay exponent p must be >= 1")
        self.amplitude = float(amplitude)
        self.exponent = float(exponent)
        self.degree = int(degree)
        self.order = int(order)
        self.profile = _profile(grid, self.amplitude, self.degree, self.order, profile)

    def _derivatives(self, t):
        p = self.exponent
        a = self.profile
        return a * t ** (-p), -p * a * t ** (-p - 1.0), p * (p + 1.0) * a * t ** (-p - 2.0)

    def describe(self) -> dict:
        return {**super().describe(), "amplitude": self.amplitude, "exponent": self.exponent,
                "degree": self.degree, "order": self.order}


class LogFoliation(ConformalFoliation):
    """f = A(x) ln t; t df/dt = A is not integrable."""

    preset = "log"

    def __init__(self, grid: SphereGrid, amplitude: float, degree: int = 2, order: int = 0,
                 profile: Optional[Field] = None, label: Optional[str] = None):
        super().__init__(grid, label)
        self.amplitude = float(amplitude)
        self.degree = int(degree)
        self.order = int(order)
        self.profile = _profile(grid, self.amplitude, self.degree, self.order, profile)

    def _derivatives(self, t):
        a = self.profile
        return a * math.log(t), a / t, -a / t ** 2

    def describe(self) -> dict:
        return {**super().describe(), "amplitude": self.amplitude,
                "degree": self.degree, "order": self.order}


class TabulatedFoliation(ConformalFoliation):
    """f sampled at fixed times, interpolated with a monotone-safe cubic in t."""

    kind = "tabulated"
    preset = "tabulated"

    def __init__(self, grid: SphereGrid, times: Sequence[float], samples: np.ndarray,
                 label: Optional[str] = None):
        super().__init__(grid, label)
        times = np.asarray(times, dtype=float)
        samples = np.asarray(samples, dtype=float)
        if samples.shape != (times.size,) + grid.shape:
            raise GridError(f"tabulated samples have shape {samples.shape}, expected "
                            f"{(times.size,) + grid.shape}")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("tabulated times must be strictly increasing")
        self.times = times
        self._f = PchipInterpolator(times, samples, axis=0)
        self._ft = self._f.derivative(1)
        self._ftt = self._f.derivative(2)

    @property
    def t_range(self):
        return float(self.times[0]), float(self.times[-1])

    @classmethod
    def from_foliation(cls, source: ConformalFoliation, times: Sequence[float]) -> "TabulatedFoliation":
        samples = np.stack([source.raw(t)[0] for t in times])
        return cls(source.grid, times, samples, label=f"tabulated-{source.label}")

    @classmethod
    def from_directory(cls, directory, grid: SphereGrid) -> "TabulatedFoliation":
        """Load QSF1 snapshots of f listed in ``manifest.json`` (keys: times, files)."""
        directory = Path(directory)
        with open(directory / "manifest.json", "r", encoding="utf-8") as handle:
            manifest = json.load(handle)
        samples = np.stack([read_qsf(directory / name) for name in manifest["files"]])
        logger.info("Loaded tabulated foliation with %d samples from %s", samples.shape[0], directory)
        return cls(grid, manifest["times"], samples, label=manifest.get("label", directory.name))

    def save(self, directory) -> None:
        directory = Path(directory)
        files = []
        for k, t in enumerate(self.times):
            name = f"f_{k:05d}.qsf"
            write_qsf(directory / name, np.asarray(self._f(t)))
            files.append(name)
        write_json(directory / "manifest.json",
                   {"times": self.times.tolist(), "files": files, "label": self.label})

    def _derivatives(self, t):
        return np.asarray(self._f(t)), np.asarray(self._ft(t)), np.asarray(self._ftt(t))

    def describe(self) -> dict:
        return {**super().describe(), "t_min": float(self.times[0]), "t_max": float(self.times[-1])}


# ----------------------------------------------------------------------
# Operations
# ----------------------------------------------------------------------

def eval_f(fol: ConformalFoliation, t: float) -> Tuple[Field, Field, Field]:
    """(f, df/dt, d2f/dt2) at time t; fails if 1 + t df/dt <= 0 anywhere."""
    f, ft, ftt = fol.raw(t)
    margin = float(np.min(1.0 + t * ft))
    if margin <= 0.0:
        raise HypothesisError("parabolicity 1 + t df/dt > 0", t, margin)
    return Field(fol.grid, f), Field(fol.grid, ft), Field(fol.grid, ftt)


def curvature_values(grid: SphereGrid, f: np.ndarray) -> np.ndarray:
    """R_f = 2 e^{-2f} (1 - Lap_sigma f) on raw arrays."""
    return 2.0 * np.exp(-2.0 * f) * (1.0 - grid.laplacian(f))


def scalar_curvature_Rf(fol: ConformalFoliation, t: float) -> Field:
    f, _, _ = eval_f(fol, t)
    return Field(fol.grid, curvature_values(fol.grid, f.values))


def laplacian_f(x: Field, fol: ConformalFoliation, t: float) -> Field:
    """Laplacian of e^{2f} sigma: e^{-2f} Lap_sigma x."""
    if x.grid != fol.grid:
        raise GridError("field and foliation live on different grids")
    f, _, _ = eval_f(fol, t)
    return Field(x.grid, np.exp(-2.0 * f.values) * x.grid.laplacian(x.values))


def gauss_bonnet_check(fol: ConformalFoliation, t: float) -> float:
    """Relative deviation of the integral of R_f over the leaf from 8 pi."""
    f, _, _ = eval_f(fol, t)
    rf = curvature_values(fol.grid, f.values)
    total = fol.grid.integrate(rf * np.exp(2.0 * f.values))
    return abs(total - 8.0 * math.pi) / (8.0 * math.pi)


# ----------------------------------------------------------------------
# Hypothesis evidence
# ----------------------------------------------------------------------

class ConditionResult(BaseModel):
    name: str
    evidence: float
    value: Optional[float] = None
    fitted_C: Optional[float] = None
    slope: Optional[float] = None
    r2: Optional[float] = None
    verdict: str
    note: str = ""


class HypothesisReport(BaseModel):
    t_max: float
    samples: int
    norm_surrogate: str = "C2 grid norm; Holder seminorm not computed"
    conditions: List[ConditionResult]

    def condition(self, name: str) -> ConditionResult:
        for item in self.conditions:
            if item.name == name:
                return item
        raise KeyError(name)

    def verdicts(self) -> dict:
        return {item.name: item.verdict for item in self.conditions}

    def all_pass(self) -> bool:
        return all(item.verdict == "pass" for item in self.conditions)


def _c2_norm(grid: SphereGrid, values: np.ndarray) -> float:
    g_theta, g_phi = grid.gradient(values)
    h_tt, h_tp, h_pp = grid.hessian(values)
    return float(
        np.max(np.abs(values))
        + np.max(np.sqrt(g_theta ** 2 + g_phi ** 2))
        + np.max(np.sqrt(h_tt ** 2 + 2.0 * h_tp ** 2 + h_pp ** 2))
    )


def _l1_condition(name: str, t: np.ndarray, integrand: np.ndarray) -> ConditionResult:
    tail = tail_integral(t, integrand, TAIL_FIT_MIN_R2)
    return ConditionResult(
        name=name,
        evidence=tail.total,
        value=tail.finite_part,
        slope=None if tail.exponent is None else -tail.exponent,
        r2=tail.r2,
        verdict=tail.verdict,
        note="trapezoid on [1, t_max] plus c t^-p tail fitted on the last decade",
    )


def _af_condition(name: str, t: np.ndarray, integral: np.ndarray) -> ConditionResult:
    deviation = np.abs(integral - (1.0 - 1.0 / t))
    gap = np.abs(integral - 1.0)
    evidence = float(np.max(t * deviation))
    late = t >= 2.0
    fitted_c = float(np.max(t[late] * gap[late])) if np.any(late) else float(np.max(t * gap))
    fit = power_law_fit(t[late], gap[late], floor=FLAT_NORM_FLOOR)
    if fit is None:
        verdict, slope, r2 = "pass", None, None
    else:
        slope, r2 = fit.slope, fit.r2
        if r2 < TAIL_FIT_MIN_R2:
            verdict = "indeterminate"
        else:
            verdict = "pass" if slope <= DECAY_SLOPE_MAX else "fail"
    return ConditionResult(name=name, evidence=evidence, fitted_C=fitted_c, slope=slope, r2=r2,
                           verdict=verdict, note="1 - C/t <= I(t) <= 1 + C/t checked on samples")


def hypothesis_report(fol: ConformalFoliation, rbar: PrescribedCurvature, t_max: float,
                      samples: int = 96) -> HypothesisReport:
    """
    Evaluate the foliation hypotheses on a log-spaced sample of [1, t_max].

    Conditions that a finite sample cannot decide are reported
    indeterminate, never passed.
    """
    if t_max < 4.0:
        raise ValueError("hypothesis_report needs t_max >= 4")
    grid = fol.grid
    t = np.geomspace(1.0, t_max, samples)
    s = np.log(t)

    margin = np.empty(samples)
    tft_star = np.empty(samples)
    a_star = np.empty(samples)
    a_low = np.empty(samples)
    dlog_star = np.empty(samples)
    rho_star = np.empty(samples)
    rho_low = np.empty(samples)
    curvature = np.empty(samples)
    rbar_norm = np.empty(samples)
    tft_fields = []
    conf_fields = []

    for k, tk in enumerate(t):
        f, ft, ftt = fol.raw(tk)
        a = 1.0 / tk + ft
        a_t = -1.0 / tk ** 2 + ftt
        margin[k] = np.min(1.0 + tk * ft)
        tft_star[k] = np.max(tk * ft)
        rf = curvature_values(grid, f)
        rb = rbar._values(float(tk))
        curvature[k] = np.max(np.abs(rf - 2.0)) + np.max(np.abs(rb)) * tk ** 2
        rbar_norm[k] = np.max(np.abs(rb)) * tk ** 2
        tft_fields.append(tk * ft)
        conf_fields.append(1.0 - np.exp(-2.0 * f))
        if margin[k] > 0.0:
            a_star[k] = np.max(a)
            a_low[k] = np.min(a)
            dlog_star[k] = np.max(a_t / a)
            rho = 2.0 * a_t / a + 3.0 * a
            rho_star[k] = np.max(rho)
            rho_low[k] = np.min(rho)

    conditions: List[ConditionResult] = []
    parabolic = bool(np.all(margin > 0.0))
    conditions.append(ConditionResult(
        name="parabolicity",
        evidence=float(max(0.0, -np.min(margin))),
        value=float(np.min(margin)),
        verdict="pass" if parabolic else "fail",
        note="min over samples of 1 + t df/dt",
    ))
    conditions.append(_l1_condition("tft_L1", t, np.abs(tft_star)))

    if parabolic:
        dlog_sup = stencil_derivative(s, np.log(a_star))
        conditions.append(_l1_condition("log_derivative_L1", t, np.abs(t * dlog_star - dlog_sup)))
    else:
        conditions.append(ConditionResult(name="log_derivative_L1", evidence=math.inf,
                                          verdict="indeterminate", note="undefined without parabolicity"))
    conditions.append(_l1_condition("curvature_L1", t, curvature))

    tft_stack = np.stack(tft_fields)
    conf_stack = np.stack(conf_fields)
    tft_dt = stencil_derivative(s, tft_stack)
    conf_dt = stencil_derivative(s, conf_stack)
    decay_norm = np.array([
        rbar_norm[k]
        + _c2_norm(grid, tft_stack[k]) + float(np.max(np.abs(tft_dt[k])))
        + _c2_norm(grid, conf_stack[k]) + float(np.max(np.abs(conf_dt[k])))
        for k in range(samples)
    ])
    late = t >= 2.0
    if np.all(decay_norm[late] <= FLAT_NORM_FLOOR):
        conditions.append(ConditionResult(name="decay_C_over_t", evidence=0.0, fitted_C=0.0,
                                          verdict="pass", note="norms vanish"))
    else:
        fit = power_law_fit(t[late], decay_norm[late], floor=FLAT_NORM_FLOOR)
        fitted_c = float(np.max(t[late] * decay_norm[late]))
        if fit is None:
            verdict = "indeterminate"
        elif fit.slope <= DECAY_SLOPE_MAX:
            verdict = "pass"
        else:
            verdict = "fail"
        conditions.append(ConditionResult(
            name="decay_C_over_t", evidence=fitted_c, fitted_C=fitted_c,
            slope=None if fit is None else fit.slope, r2=None if fit is None else fit.r2,
            verdict=verdict, note="log-log fit of the C2 surrogate norm for t >= 2",
        ))

    if parabolic:
        lower = exponential_sweep(s, 1.0 / (t * a_star), t * rho_star)
        upper = exponential_sweep(s, 1.0 / (t * a_low), t * rho_low)
        conditions.append(_af_condition("af_lower", t, lower))
        conditions.append(_af_condition("af_upper", t, upper))
    else:
        for name in ("af_lower", "af_upper"):
            conditions.append(ConditionResult(name=name, evidence=math.inf, verdict="indeterminate",
                                              note="undefined without parabolicity"))

    report = HypothesisReport(t_max=float(t_max), samples=int(samples), conditions=conditions)
    for item in conditions:
        if item.verdict != "pass":
            logger.warning("Hypothesis %s: %s (evidence %.6g)", item.name, item.verdict, item.evidence)
    logger.info("Hypothesis report for %s: %s", fol.label, report.verdicts())
    return report
