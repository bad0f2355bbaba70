"""
Modified Ricci flow on axisymmetric 2-spheres.

Metrics are g = a dtheta^2 + b sin^2(theta) dphi^2, sampled at the
Gauss-Legendre latitudes of the sphere grid and written in the coordinate
x = cos(theta).  Derivatives in x use a Legendre collocation matrix, so
pole regularity comes from the polynomial basis rather than from boundary
stencils.  The flow d/dt g_ij = 2 M_ij is integrated with RK4 in
(ln a, ln b); M is trace free, so ab and hence the area element are
conserved exactly by the stepper.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.polynomial import legendre
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from ..config.settings import (
    POLE_REGULARITY_TOL,
    RICCI_DECAY_NOISE_FLOOR,
    RICCI_DECAY_REL_FLOOR,
    RICCI_FLOW_SAFETY,
    RK4_STABILITY_RADIUS,
)
from ..utils.fitting import exponential_rate_fit
from ..utils.io import read_json, read_qsp, write_json, write_qsp
from .errors import CoverageError, GridError, NumericalError, StabilityError
from .sphere_ops import Field, SphereGrid


logger = logging.getLogger(__name__)


class AxiGrid:
    """Latitude nodes x_i = cos(theta_i) (north to south) with collocation operators."""

    def __init__(self, nlat: int):
        x, w = legendre.leggauss(int(nlat))
        order = np.argsort(-x)
        self.nlat = int(nlat)
        self.x = x[order]
        self.weights = w[order]
        size = self.nlat
        vander = legendre.legvander(self.x, size - 1)
        deriv = np.empty_like(vander)
        for j in range(size):
            unit = np.zeros(size)
            unit[j] = 1.0
            deriv[:, j] = legendre.legval(self.x, legendre.legder(unit))
        self._inverse_vander = np.linalg.inv(vander)
        self.D = deriv @ self._inverse_vander
        self.one_minus_x2 = 1.0 - self.x ** 2
        for arr in (self.x, self.weights, self.D, self._inverse_vander, self.one_minus_x2):
            arr.setflags(write=False)

    def __eq__(self, other) -> bool:
        return isinstance(other, AxiGrid) and self.nlat == other.nlat

    def __hash__(self) -> int:
        return hash(("axi", self.nlat))

    def derivative(self, values: np.ndarray) -> np.ndarray:
        return self.D @ values

    def extrapolate(self, values: np.ndarray, points) -> np.ndarray:
        """Evaluate the Legendre interpolant of ``values`` at arbitrary x."""
        return legendre.legval(points, self._inverse_vander @ values)

    def integrate(self, values: np.ndarray) -> float:
        """Integral over the sphere of an axisymmetric density in dx dphi."""
        return float(2.0 * math.pi * np.sum(self.weights * values))


class AxiMetric:
    """Diagonal axisymmetric metric; a = g_theta_theta, b = g_phi_phi / sin^2(theta)."""

    def __init__(self, grid: AxiGrid, a: np.ndarray, b: np.ndarray):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != (grid.nlat,) or b.shape != (grid.nlat,):
            raise GridError(f"metric profiles must have shape ({grid.nlat},)")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NumericalError("metric profile contains non-finite values")
        if np.min(a) <= 0.0 or np.min(b) <= 0.0:
            raise NumericalError("metric components must be strictly positive")
        self.grid = grid
        self.a = a
        self.b = b

    @property
    def density(self) -> np.ndarray:
        """sqrt(ab): area element relative to dx dphi."""
        return np.sqrt(self.a * self.b)

    @property
    def area(self) -> float:
        return self.grid.integrate(self.density)

    def is_round(self, tol: float = 1e-14) -> bool:
        return bool(np.max(np.abs(self.a - 1.0)) <= tol and np.max(np.abs(self.b - 1.0)) <= tol)


class FlowSample:
    """Geometry of one leaf metric: curvature, Ricci potential and trace-free Hessian."""

    def __init__(self, t: float, metric: AxiMetric, R: np.ndarray, r: float, F: np.ndarray,
                 m1: np.ndarray):
        self.t = float(t)
        self.metric = metric
        self.R = R
        self.r = r
        self.F = F
        self.m1 = m1
        self.msq = 2.0 * m1 ** 2

    def diagnostics(self) -> Dict[str, float]:
        metric = self.metric
        density = metric.density
        return {
            "t": self.t,
            "r_dev": float(np.max(np.abs(self.R - 2.0))),
            "m_norm": float(np.max(np.sqrt(self.msq))),
            "area_drift": abs(metric.area - 4.0 * math.pi),
            "min_R": float(np.min(self.R)),
            "gauss_bonnet": abs(metric.grid.integrate(self.R * density) - 8.0 * math.pi),
            "F_mean": metric.grid.integrate(self.F * density),
        }


# ----------------------------------------------------------------------
# Leaf geometry
# ----------------------------------------------------------------------

def pole_regularity(g: AxiMetric) -> Tuple[float, float]:
    """|a - b| at the north and south pole, by Legendre extrapolation."""
    diff = g.grid.extrapolate(g.a - g.b, np.array([1.0, -1.0]))
    return float(abs(diff[0])), float(abs(diff[1]))


def surface_scalar_curvature(g: AxiMetric, check_poles: bool = True) -> np.ndarray:
    """
    R = 2K with K = -(1/sqrt(ab)) dQ/dx, Q = ((1 - x^2) sqrt(b)_x - x sqrt(b)) / sqrt(a).

    The round metric gives R = 2.
    """
    grid = g.grid
    if check_poles:
        north, south = pole_regularity(g)
        scale = max(1.0, float(np.max(g.a)))
        if max(north, south) > POLE_REGULARITY_TOL * scale:
            raise NumericalError(f"metric not regular at the poles (|a - b| = {max(north, south):.3e})")
    alpha = np.sqrt(g.a)
    beta = np.sqrt(g.b)
    q = (grid.one_minus_x2 * grid.derivative(beta) - grid.x * beta) / alpha
    return -2.0 * grid.derivative(q) / (alpha * beta)


def mean_scalar(g: AxiMetric, R: np.ndarray) -> float:
    density = g.density
    return g.grid.integrate(R * density) / g.grid.integrate(density)


def laplacian_operator(g: AxiMetric) -> np.ndarray:
    """
    Collocation matrix of the Laplace-Beltrami operator on axisymmetric functions,
    (1/sqrt(ab)) d/dx ((1 - x^2) sqrt(b/a) dF/dx).

    The (1 - x^2) factor is applied exactly, so sqrt(ab) * weights is an
    exact left null vector.
    """
    grid = g.grid
    kappa = np.sqrt(g.b / g.a)
    flux = np.diag(-2.0 * grid.x) + np.diag(grid.one_minus_x2) @ grid.D
    return np.diag(1.0 / g.density) @ flux @ np.diag(kappa) @ grid.D


def solve_ricci_potential(g: AxiMetric, R: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """
    Mean-zero F with Lap_g F = R - r, via the bordered system [[L, 1], [w^T, 0]].
    """
    grid = g.grid
    r = mean_scalar(g, R)
    source = R - r
    weights = grid.weights * g.density
    mismatch = float(np.sum(weights * source))
    if abs(mismatch) > tol * max(1.0, float(np.sum(weights * np.abs(source)))):
        raise NumericalError(f"Ricci potential not solvable: integral of R - r is {mismatch:.3e}")
    n = grid.nlat
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = laplacian_operator(g)
    system[:n, n] = 1.0
    system[n, :n] = weights
    rhs = np.concatenate((source, [0.0]))
    solution = np.linalg.solve(system, rhs)
    return solution[:n]


def _hessian_frame(g: AxiMetric, F: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal-frame Hessian components (theta-theta, phi-phi) of an axisymmetric F."""
    grid = g.grid
    x = grid.x
    omx2 = grid.one_minus_x2
    f_x = grid.derivative(F)
    f_xx = grid.derivative(f_x)
    a_x = grid.derivative(g.a)
    b_x = grid.derivative(g.b)
    h1 = (omx2 * f_xx - x * f_x - omx2 * a_x * f_x / (2.0 * g.a)) / g.a
    h2 = (b_x * omx2 - 2.0 * x * g.b) * f_x / (2.0 * g.a * g.b)
    return h1, h2


def trace_free_M(g: AxiMetric, F: np.ndarray, R: np.ndarray, r: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (M_theta_theta, M_phi_phi, |M|^2) with M = (r - R) g / 2 + Hess F.

    R - r is replaced by the discrete trace of Hess F, which it equals up
    to the elliptic solve residual, so the returned M is trace free to
    roundoff.
    """
    h1, h2 = _hessian_frame(g, F)
    m1 = 0.5 * (h1 - h2)
    m2 = -m1
    return g.a * m1, g.b * g.grid.one_minus_x2 * m2, m1 ** 2 + m2 ** 2


def leaf_sample(g: AxiMetric, t: float) -> FlowSample:
    R = surface_scalar_curvature(g)
    r = mean_scalar(g, R)
    F = solve_ricci_potential(g, R)
    h1, h2 = _hessian_frame(g, F)
    return FlowSample(t, g, R, r, F, 0.5 * (h1 - h2))


# ----------------------------------------------------------------------
# Flow
# ----------------------------------------------------------------------

def _log_velocity(grid: AxiGrid, log_a: np.ndarray, log_b: np.ndarray, t: float, dt: float) -> np.ndarray:
    a = np.exp(log_a)
    b = np.exp(log_b)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise StabilityError(t, dt)
    metric = AxiMetric(grid, a, b)
    R = surface_scalar_curvature(metric, check_poles=False)
    F = solve_ricci_potential(metric, R)
    h1, h2 = _hessian_frame(metric, F)
    return h1 - h2  # d ln a / dt = 2 m1 = -d ln b / dt


def stable_dt(g: AxiMetric, safety: float = RICCI_FLOW_SAFETY) -> float:
    lmax = g.grid.nlat - 1
    return safety * RK4_STABILITY_RADIUS * float(np.min(np.minimum(g.a, g.b))) / (lmax * (lmax + 1.0))


def step_modified_flow(g: AxiMetric, dt: float, t: float = 1.0) -> AxiMetric:
    """One RK4 step of d/dt g_ij = 2 M_ij on (ln a, ln b)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    grid = g.grid
    log_a = np.log(g.a)
    log_b = np.log(g.b)
    k1 = _log_velocity(grid, log_a, log_b, t, dt)
    k2 = _log_velocity(grid, log_a + 0.5 * dt * k1, log_b - 0.5 * dt * k1, t + 0.5 * dt, dt)
    k3 = _log_velocity(grid, log_a + 0.5 * dt * k2, log_b - 0.5 * dt * k2, t + 0.5 * dt, dt)
    k4 = _log_velocity(grid, log_a + dt * k3, log_b - dt * k3, t + dt, dt)
    incr = dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    a = np.exp(log_a + incr)
    b = np.exp(log_b - incr)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise StabilityError(t, dt)
    new = AxiMetric(grid, a, b)
    north, south = pole_regularity(new)
    if max(north, south) > POLE_REGULARITY_TOL * max(1.0, float(np.max(a))):
        raise StabilityError(t, dt)
    return new


class BackgroundSample:
    """Interpolated leaf geometry of the flow at one time."""

    def __init__(self, grid: AxiGrid, t: float, a: np.ndarray, b: np.ndarray, R: np.ndarray, msq: np.ndarray):
        self.grid = grid
        self.t = float(t)
        self.a = a
        self.b = b
        self.R = R
        self.msq = msq
        self.density = np.sqrt(a * b)
        self.rho_x = grid.derivative(np.sqrt(b / a))


class RicciFlowTrajectory:
    """
    Samples of the modified Ricci flow from t = 1, one per RK4 step.

    Immutable once built; ``at(t)`` interpolates a, b, R and |M|^2 with
    cubic splines in t.
    """

    def __init__(self, grid: AxiGrid, times: np.ndarray, a: np.ndarray, b: np.ndarray,
                 R: np.ndarray, F: np.ndarray, msq: np.ndarray, diagnostics: List[Dict[str, float]],
                 label: str = "ricci-flow"):
        times = np.asarray(times, dtype=float)
        if times.size < 1 or abs(times[0] - 1.0) > 1e-12:
            raise ValueError("trajectory must start at t = 1")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("trajectory times must be strictly increasing")
        self.grid = grid
        self.times = times
        self.a = a
        self.b = b
        self.R = R
        self.F = F
        self.msq = msq
        self.diagnostics = diagnostics
        self.label = label
        self.rates = self._fit_rates()
        if times.size >= 2:
            self._splines = {name: CubicSpline(times, values, axis=0)
                             for name, values in (("a", a), ("b", b), ("R", R), ("msq", msq))}
        else:
            self._splines = None

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    @property
    def min_curvature(self) -> float:
        return float(np.min(self.R))

    def is_round(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.a - 1.0)) <= tol and np.max(np.abs(self.b - 1.0)) <= tol)

    def metric(self, k: int) -> AxiMetric:
        return AxiMetric(self.grid, self.a[k], self.b[k])

    def at(self, t: float) -> BackgroundSample:
        if t < 1.0 - 1e-12 or t > self.t_max + 1e-12:
            raise CoverageError(t, 1.0, self.t_max)
        if self._splines is None:
            return BackgroundSample(self.grid, t, self.a[0], self.b[0], self.R[0], self.msq[0])
        values = {name: np.asarray(spline(t)) for name, spline in self._splines.items()}
        return BackgroundSample(self.grid, t, values["a"], values["b"], values["R"],
                                np.maximum(values["msq"], 0.0))

    def _fit_rates(self) -> Dict[str, Optional[float]]:
        t = self.times
        r_dev = np.array([row["r_dev"] for row in self.diagnostics])
        m_norm = np.array([row["m_norm"] for row in self.diagnostics])
        rates: Dict[str, Optional[float]] = {}
        for name, series in (("R", r_dev), ("M", m_norm)):
            end = _plateau_start(series)
            fit = exponential_rate_fit(t[:end], series[:end], RICCI_DECAY_NOISE_FLOOR)
            rates[f"lambda_{name}"] = None if fit is None else -fit.slope
            rates[f"r2_{name}"] = None if fit is None else fit.r2
        return rates

    def summary(self) -> Dict:
        def worst(key):
            return max(row[key] for row in self.diagnostics)

        return {
            "label": self.label,
            "nlat": self.grid.nlat,
            "samples": int(self.times.size),
            "t_max": self.t_max,
            "rates": self.rates,
            "max_area_drift": worst("area_drift"),
            "max_gauss_bonnet": worst("gauss_bonnet"),
            "max_F_mean": max(abs(row["F_mean"]) for row in self.diagnostics),
            "min_R": self.min_curvature,
        }


def _plateau_start(series: np.ndarray) -> int:
    """Index of the first sample at the noise plateau, floor relative to the first sample."""
    floor = max(RICCI_DECAY_NOISE_FLOOR, RICCI_DECAY_REL_FLOOR * float(series[0]))
    below = np.flatnonzero(series <= floor)
    return int(below[0]) if below.size else int(series.size)


def run_flow(g1: AxiMetric, t_max: float, safety: float = RICCI_FLOW_SAFETY,
             label: str = "ricci-flow") -> RicciFlowTrajectory:
    """Flow from t = 1 to t_max, recording every step."""
    if t_max < 1.0:
        raise ValueError("t_max must be at least 1")
    grid = g1.grid
    metric = g1
    t = 1.0
    samples = [leaf_sample(metric, t)]
    round_start = metric.is_round()
    while t < t_max - 1e-12:
        if round_start:
            # fixed point of the flow
            dt = min(1.0, t_max - t)
        else:
            dt = min(stable_dt(metric, safety), t_max - t)
            metric = step_modified_flow(metric, dt, t)
        t = t + dt
        logger.debug("Ricci flow step to t=%.6g (dt=%.3g)", t, dt)
        samples.append(leaf_sample(metric, t))

    diagnostics = [sample.diagnostics() for sample in samples]
    trajectory = RicciFlowTrajectory(
        grid,
        np.array([sample.t for sample in samples]),
        np.stack([sample.metric.a for sample in samples]),
        np.stack([sample.metric.b for sample in samples]),
        np.stack([sample.R for sample in samples]),
        np.stack([sample.F for sample in samples]),
        np.stack([sample.msq for sample in samples]),
        diagnostics,
        label=label,
    )
    logger.info("Ricci flow %s: %d samples to t=%.4g, rates %s", label, len(samples), t, trajectory.rates)
    return trajectory


# ----------------------------------------------------------------------
# Initial metrics
# ----------------------------------------------------------------------

def round_metric(grid: AxiGrid) -> AxiMetric:
    return AxiMetric(grid, np.ones(grid.nlat), np.ones(grid.nlat))


def ellipsoid_metric(grid: AxiGrid, axis_ratio: float = 1.2) -> AxiMetric:
    """
    Spheroid with polar/equatorial axis ratio ``axis_ratio``, scaled to area
    4 pi and written in equal-area coordinates (ab = 1).
    """
    if axis_ratio <= 0.0:
        raise ValueError("axis_ratio must be positive")
    c2 = float(axis_ratio) ** 2

    def arc(v):
        return math.sqrt(math.cos(v) ** 2 + c2 * math.sin(v) ** 2)

    def area(v):
        return 2.0 * math.pi * quad(lambda s: math.sin(s) * arc(s), 0.0, v, epsabs=1e-14, epsrel=1e-13)[0]

    total = area(math.pi)
    scale2 = 4.0 * math.pi / total
    b = np.empty(grid.nlat)
    for i, x in enumerate(grid.x):
        target = (1.0 - x) * total / 2.0
        v = brentq(lambda s: area(s) - target, 0.0, math.pi, xtol=1e-15, rtol=1e-15)
        rho2 = scale2 * math.sin(v) ** 2
        b[i] = rho2 / (1.0 - x * x)
    return AxiMetric(grid, 1.0 / b, b)


# ----------------------------------------------------------------------
# Operators on the sphere grid
# ----------------------------------------------------------------------

def _check_background(u: Field, sample: BackgroundSample) -> SphereGrid:
    if u.grid.nlat != sample.grid.nlat:
        raise GridError("sphere grid and Ricci flow background use different latitudes")
    return u.grid


def laplacian_values(grid: SphereGrid, values: np.ndarray, sample: BackgroundSample) -> np.ndarray:
    """
    Laplace-Beltrami operator of g(t) on an arbitrary function:
    Lap_sigma u / a + (a - b) u_phiphi / ((1 - x^2) ab) - sin(theta) rho_x u_theta / sqrt(ab),
    with rho = sqrt(b/a).
    """
    a = sample.a[:, None]
    b = sample.b[:, None]
    lap = grid.laplacian(values)
    if np.max(np.abs(sample.a - 1.0)) == 0.0 and np.max(np.abs(sample.b - 1.0)) == 0.0:
        return lap
    omx2 = (1.0 - grid.cos_theta ** 2)[:, None]
    u_pp = grid.phi_second_derivative(values)
    u_t = grid.theta_derivative(values)
    return (lap / a + (a - b) * u_pp / (omx2 * a * b)
            - grid.sin_theta[:, None] * sample.rho_x[:, None] * u_t / sample.density[:, None])


def grad_norm_sq_values(grid: SphereGrid, values: np.ndarray, sample: BackgroundSample) -> np.ndarray:
    g_theta, g_phi = grid.gradient(values)
    return g_theta ** 2 / sample.a[:, None] + g_phi ** 2 / sample.b[:, None]


def laplacian_g(u: Field, sample: BackgroundSample) -> Field:
    grid = _check_background(u, sample)
    return Field(grid, laplacian_values(grid, u.values, sample))


def grad_norm_sq_g(u: Field, sample: BackgroundSample) -> Field:
    grid = _check_background(u, sample)
    return Field(grid, grad_norm_sq_values(grid, u.values, sample))


def broadcast(sample_values: np.ndarray, grid: SphereGrid) -> np.ndarray:
    """Axisymmetric profile as a full grid array."""
    return np.repeat(np.asarray(sample_values)[:, None], grid.nlon, axis=1)


# ----------------------------------------------------------------------
# Export
# ----------------------------------------------------------------------

def export_trajectory(traj: RicciFlowTrajectory, directory, every: int = 1) -> None:
    """JSON manifest plus QSP1 dumps of a and b at every ``every``-th sample."""
    directory = Path(directory)
    keep = list(range(0, traj.times.size, max(1, int(every))))
    if keep[-1] != traj.times.size - 1:
        keep.append(traj.times.size - 1)
    files = []
    for k in keep:
        a_name = f"a_{k:06d}.qsp"
        b_name = f"b_{k:06d}.qsp"
        write_qsp(directory / a_name, traj.a[k])
        write_qsp(directory / b_name, traj.b[k])
        files.append({"t": float(traj.times[k]), "a": a_name, "b": b_name})
    write_json(directory / "manifest.json", {
        **traj.summary(),
        "times": traj.times.tolist(),
        "diagnostics": traj.diagnostics,
        "profiles": files,
    })


def import_trajectory(directory) -> RicciFlowTrajectory:
    """Rebuild a trajectory from exported profiles; derived fields are recomputed."""
    directory = Path(directory)
    manifest = read_json(directory / "manifest.json")
    grid = AxiGrid(int(manifest["nlat"]))
    samples = []
    for entry in manifest["profiles"]:
        metric = AxiMetric(grid, read_qsp(directory / entry["a"]), read_qsp(directory / entry["b"]))
        samples.append(leaf_sample(metric, entry["t"]))
    return RicciFlowTrajectory(
        grid,
        np.array([sample.t for sample in samples]),
        np.stack([sample.metric.a for sample in samples]),
        np.stack([sample.metric.b for sample in samples]),
        np.stack([sample.R for sample in samples]),
        np.stack([sample.F for sample in samples]),
        np.stack([sample.msq for sample in samples]),
        [sample.diagnostics() for sample in samples],
        label=manifest.get("label", directory.name),
    )
