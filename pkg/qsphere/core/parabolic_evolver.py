"""
Time integration of the lapse equations.

Two branches share one interface: the conformally round foliation and
the modified Ricci flow background.  ``ScaledBranch`` wraps either one for
the horizon construction, u~(t) = sqrt(t/(t+1)) u(t+1).  Runs integrate
in s = ln t with classical RK4 or the IMEX ARS(2,2,2) scheme whose
implicit part is the frozen diagonal operator D Lap_sigma.
"""

import logging
import math
from collections import deque
from typing import Callable, Dict, List, Optional

import numpy as np

from ..config.settings import MIN_DS, RK4_STABILITY_RADIUS
from ..models.record import SolutionRecord
from ..models.scenario import EvolverControls
from ..utils.fitting import finite_difference_weights
from .bounds_envelopes import AdmissibilityK, conformal_coefficients, ricci_coefficients, scaled_coefficients
from .conformal_foliation import ConformalFoliation, curvature_values, eval_f
from .errors import GridError, HypothesisError, NumericalError, PositivityError
from .prescribed_curvature import PrescribedCurvature
from .ricci_flow_foliation import (
    RicciFlowTrajectory,
    broadcast,
    grad_norm_sq_values,
    laplacian_values,
)
from .sphere_ops import Field, SphereGrid


logger = logging.getLogger(__name__)

__all__ = [
    "ConformalBranch",
    "RicciBranch",
    "ScaledBranch",
    "EvolverControls",
    "evolve",
    "rhs_conformal",
    "rhs_conformal_w",
    "rhs_conformal_m",
    "rhs_ricci",
    "rhs_ricci_w",
    "rhs_ricci_m",
    "round_closed_form_w",
    "closed_form_w",
]


class _ConformalLeaf:
    def __init__(self, grid: SphereGrid, fol: ConformalFoliation, rbar: PrescribedCurvature, t: float):
        f, ft, ftt = eval_f(fol, t)
        self.t = t
        self.f = f.values
        self.ft = ft.values
        self.ftt = ftt.values
        self.a = 1.0 / t + self.ft
        self.a_t = -1.0 / t ** 2 + self.ftt
        self.conf = np.exp(-2.0 * self.f)
        self.curvature = curvature_values(grid, self.f)
        self.rbar = rbar._values(t)
        self.gap = self.curvature - t * t * self.rbar


class _RicciLeaf:
    def __init__(self, grid: SphereGrid, traj: RicciFlowTrajectory, rbar: PrescribedCurvature, t: float):
        self.t = t
        self.sample = traj.at(t)
        self.curvature = broadcast(self.sample.R, grid)
        self.msq = broadcast(self.sample.msq, grid)
        self.density = broadcast(self.sample.density, grid)
        self.min_metric = float(np.min(np.minimum(self.sample.a, self.sample.b)))
        self.rbar = rbar._values(t)
        self.gap = self.curvature - t * t * self.rbar


class ConformalBranch:
    """Lapse equation on leaves e^{2f} sigma; ``rhs*`` return d/dt."""

    kind = "conformal"

    def __init__(self, fol: ConformalFoliation, rbar: PrescribedCurvature):
        if fol.grid != rbar.grid:
            raise GridError("foliation and prescribed curvature use different grids")
        self.grid = fol.grid
        self.fol = fol
        self.rbar = rbar
        self._cache = (None, None)

    def leaf(self, t: float) -> _ConformalLeaf:
        cached_t, cached = self._cache
        if cached_t == t:
            return cached
        leaf = _ConformalLeaf(self.grid, self.fol, self.rbar, t)
        self._cache = (t, leaf)
        return leaf

    def is_round(self) -> bool:
        return self.fol.is_round()

    def envelope_coefficients(self):
        return conformal_coefficients(self.fol, self.rbar)

    def diffusion(self, u: np.ndarray, t: float) -> float:
        """Largest coefficient of Lap_sigma in du/ds."""
        c = self.leaf(t)
        return float(np.max(u * u * c.conf / (2.0 * t * c.a)))

    def _dot(self, x: np.ndarray, y: np.ndarray, c: _ConformalLeaf) -> np.ndarray:
        xt, xp = self.grid.gradient(x)
        yt, yp = self.grid.gradient(y)
        return c.conf * (xt * yt + xp * yp)

    def rhs(self, u: np.ndarray, t: float) -> np.ndarray:
        c = self.leaf(t)
        lap = c.conf * self.grid.laplacian(u)
        return (u * u * lap / (2.0 * t * t) + (c.a_t + 1.5 * c.a ** 2) * u
                - c.gap * u ** 3 / (4.0 * t * t)) / c.a

    def rhs_w(self, w: np.ndarray, t: float) -> np.ndarray:
        c = self.leaf(t)
        u = w ** -0.5
        lap = c.conf * self.grid.laplacian(w)
        return (lap / (2.0 * t * t * w) + 1.5 * u * self._dot(u, w, c) / (t * t)
                + c.gap / (2.0 * t * t) - (2.0 * c.a_t + 3.0 * c.a ** 2) * w) / c.a

    def rhs_m(self, m: np.ndarray, t: float) -> np.ndarray:
        c = self.leaf(t)
        u = (1.0 - 2.0 * m / t) ** -0.5
        lap = c.conf * self.grid.laplacian(m)
        tft = t * c.ft
        source = (c.curvature - 2.0 - t * t * c.rbar - 4.0 * t * t * c.ftt - 12.0 * tft - 6.0 * tft ** 2) / (4.0 * t)
        return (u * u * lap / (2.0 * t * t) + 1.5 * u * self._dot(u, m, c) / (t * t)
                - (2.0 * c.ftt + 5.0 * c.ft / t + 3.0 * c.ft ** 2) * m - source) / c.a

    # Geometry of the leaf t^2 e^{2f} sigma inside u^2 dt^2 + t^2 g(t)

    def leaf_laplacian(self, values: np.ndarray, t: float) -> np.ndarray:
        return self.leaf(t).conf * self.grid.laplacian(values) / (t * t)

    def grad_norm_sq(self, values: np.ndarray, t: float) -> np.ndarray:
        """|grad u|^2 with respect to g(t) = e^{2f} sigma."""
        return self.leaf(t).conf * self.grid.grad_norm_sq(values)

    def leaf_curvature(self, t: float) -> np.ndarray:
        return self.leaf(t).curvature / (t * t)

    def mean_curvature(self, u: np.ndarray, t: float) -> np.ndarray:
        return 2.0 * self.leaf(t).a / u

    def second_form_sq(self, u: np.ndarray, t: float) -> np.ndarray:
        return 2.0 * self.leaf(t).a ** 2 / (u * u)

    def mean_curvature_dt(self, u: np.ndarray, u_t: np.ndarray, t: float) -> np.ndarray:
        c = self.leaf(t)
        return 2.0 * c.a_t / u - 2.0 * c.a * u_t / (u * u)

    def area_density(self, t: float) -> np.ndarray:
        return t * t / self.leaf(t).conf

    def hessian_norm_sq(self, t: float) -> np.ndarray:
        return np.zeros(self.grid.shape)

    def rbar_values(self, t: float) -> np.ndarray:
        return self.leaf(t).rbar

    def curvature_gap(self, t: float) -> np.ndarray:
        return self.leaf(t).gap

    def flux_correction(self, u: np.ndarray, t: float) -> np.ndarray:
        """-(t/2)(e^{2f} - 1) u^{-2} - t^2 e^{2f} f_t u^{-2}."""
        c = self.leaf(t)
        w = u ** -2
        e2f = 1.0 / c.conf
        return -0.5 * t * (e2f - 1.0) * w - t * t * e2f * c.ft * w

    def describe(self) -> Dict:
        return {"branch": self.kind, "foliation": self.fol.describe(), "rbar": self.rbar.describe()}


class RicciBranch:
    """Lapse equation on a modified Ricci flow background."""

    kind = "ricci"

    def __init__(self, traj: RicciFlowTrajectory, rbar: PrescribedCurvature):
        if traj.grid.nlat != rbar.grid.nlat:
            raise GridError("Ricci flow background and sphere grid use different latitudes")
        self.grid = rbar.grid
        self.traj = traj
        self.rbar = rbar
        self._cache = (None, None)

    def leaf(self, t: float) -> _RicciLeaf:
        cached_t, cached = self._cache
        if cached_t == t:
            return cached
        leaf = _RicciLeaf(self.grid, self.traj, self.rbar, t)
        self._cache = (t, leaf)
        return leaf

    def is_round(self) -> bool:
        return self.traj.is_round()

    def envelope_coefficients(self):
        return ricci_coefficients(self.traj, self.rbar)

    def diffusion(self, u: np.ndarray, t: float) -> float:
        return float(np.max(u * u)) / (2.0 * self.leaf(t).min_metric)

    def _dot(self, x: np.ndarray, y: np.ndarray, c: _RicciLeaf) -> np.ndarray:
        xt, xp = self.grid.gradient(x)
        yt, yp = self.grid.gradient(y)
        return xt * yt / c.sample.a[:, None] + xp * yp / c.sample.b[:, None]

    def rhs(self, u: np.ndarray, t: float) -> np.ndarray:
        c = self.leaf(t)
        lap = laplacian_values(self.grid, u, c.sample)
        return (0.5 * u * u * lap + (0.25 * t * t * c.msq + 0.5) * u - 0.25 * c.gap * u ** 3) / t

    def rhs_w(self, w: np.ndarray, t: float) -> np.ndarray:
        c = self.leaf(t)
        u = w ** -0.5
        lap = laplacian_values(self.grid, w, c.sample)
        return (lap / (2.0 * w) + 1.5 * u * self._dot(u, w, c)
                - (0.5 * t * t * c.msq + 1.0) * w + 0.5 * c.gap) / t

    def rhs_m(self, m: np.ndarray, t: float) -> np.ndarray:
        c = self.leaf(t)
        u = (1.0 - 2.0 * m / t) ** -0.5
        lap = laplacian_values(self.grid, m, c.sample)
        return (0.5 * u * u * lap + 1.5 * u * self._dot(u, m, c) - 0.5 * t * t * c.msq * m
                + 0.25 * t ** 3 * c.msq + 0.5 * t - 0.25 * t * c.curvature + 0.25 * t ** 3 * c.rbar) / t

    def leaf_laplacian(self, values: np.ndarray, t: float) -> np.ndarray:
        return laplacian_values(self.grid, values, self.leaf(t).sample) / (t * t)

    def grad_norm_sq(self, values: np.ndarray, t: float) -> np.ndarray:
        return grad_norm_sq_values(self.grid, values, self.leaf(t).sample)

    def leaf_curvature(self, t: float) -> np.ndarray:
        return self.leaf(t).curvature / (t * t)

    def mean_curvature(self, u: np.ndarray, t: float) -> np.ndarray:
        return 2.0 / (t * u)

    def second_form_sq(self, u: np.ndarray, t: float) -> np.ndarray:
        return 2.0 / (t * t * u * u) + self.leaf(t).msq / (u * u)

    def mean_curvature_dt(self, u: np.ndarray, u_t: np.ndarray, t: float) -> np.ndarray:
        return -2.0 / (t * t * u) - 2.0 * u_t / (t * u * u)

    def area_density(self, t: float) -> np.ndarray:
        return t * t * self.leaf(t).density

    def hessian_norm_sq(self, t: float) -> np.ndarray:
        return self.leaf(t).msq

    def rbar_values(self, t: float) -> np.ndarray:
        return self.leaf(t).rbar

    def curvature_gap(self, t: float) -> np.ndarray:
        return self.leaf(t).gap

    def flux_correction(self, u: np.ndarray, t: float) -> np.ndarray:
        return np.zeros(self.grid.shape)

    def describe(self) -> Dict:
        return {"branch": self.kind, "trajectory": self.traj.summary(), "rbar": self.rbar.describe()}


class ScaledBranch:
    """
    Horizon variable u~(t) = sqrt(t/T) u(T), T = t + 1, for either branch:

        du~/dt = u~ / (2 t T) + sqrt(t/T) rhs(sqrt(T/t) u~, T).
    """

    def __init__(self, base):
        self.base = base
        self.kind = base.kind
        self.grid = base.grid

    def rhs(self, u: np.ndarray, t: float) -> np.ndarray:
        big_t = t + 1.0
        factor = math.sqrt(big_t / t)
        return u / (2.0 * t * big_t) + self.base.rhs(factor * u, big_t) / factor

    def diffusion(self, u: np.ndarray, t: float) -> float:
        big_t = t + 1.0
        return (t / big_t) * self.base.diffusion(math.sqrt(big_t / t) * u, big_t)

    def rhs_w(self, w: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError("horizon runs integrate the u-form only")

    def is_round(self) -> bool:
        return self.base.is_round()

    def envelope_coefficients(self):
        return scaled_coefficients(self.base.envelope_coefficients())

    def describe(self) -> Dict:
        return {**self.base.describe(), "scaled": True}


# ----------------------------------------------------------------------
# Field-level right-hand sides
# ----------------------------------------------------------------------

def _require_positive(u: Field, t: float) -> None:
    low = u.min()
    if not low > 0.0:
        raise PositivityError(t, low)


def rhs_conformal(u: Field, t: float, fol: ConformalFoliation, rbar: PrescribedCurvature) -> Field:
    _require_positive(u, t)
    return Field(u.grid, ConformalBranch(fol, rbar).rhs(u.values, t))


def rhs_conformal_w(w: Field, t: float, fol: ConformalFoliation, rbar: PrescribedCurvature) -> Field:
    _require_positive(w, t)
    return Field(w.grid, ConformalBranch(fol, rbar).rhs_w(w.values, t))


def rhs_conformal_m(m: Field, t: float, fol: ConformalFoliation, rbar: PrescribedCurvature) -> Field:
    return Field(m.grid, ConformalBranch(fol, rbar).rhs_m(m.values, t))


def rhs_ricci(u: Field, t: float, traj: RicciFlowTrajectory, rbar: PrescribedCurvature) -> Field:
    _require_positive(u, t)
    return Field(u.grid, RicciBranch(traj, rbar).rhs(u.values, t))


def rhs_ricci_w(w: Field, t: float, traj: RicciFlowTrajectory, rbar: PrescribedCurvature) -> Field:
    _require_positive(w, t)
    return Field(w.grid, RicciBranch(traj, rbar).rhs_w(w.values, t))


def rhs_ricci_m(m: Field, t: float, traj: RicciFlowTrajectory, rbar: PrescribedCurvature) -> Field:
    return Field(m.grid, RicciBranch(traj, rbar).rhs_m(m.values, t))


def closed_form_w(t, w0: float, t0: float = 1.0):
    """Solution of t dw/dt = 1 - w with w(t0) = w0."""
    t = np.asarray(t, dtype=float)
    return 1.0 + (w0 - 1.0) * t0 / t


def round_closed_form_w(t, c: float):
    """w(t) = (t - 1)/t + c^{-2}/t for phi = c on the round background."""
    return closed_form_w(t, c ** -2)


# ----------------------------------------------------------------------
# Steppers (state y, log time s)
# ----------------------------------------------------------------------

ImexGamma = 1.0 - 1.0 / math.sqrt(2.0)
ImexDelta = 1.0 - 1.0 / (2.0 * ImexGamma)


def rk4_step(F: Callable[[np.ndarray, float], np.ndarray], y: np.ndarray, s: float, h: float) -> np.ndarray:
    k1 = F(y, s)
    k2 = F(y + 0.5 * h * k1, s + 0.5 * h)
    k3 = F(y + 0.5 * h * k2, s + 0.5 * h)
    k4 = F(y + h * k3, s + h)
    return y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def imex_step(F: Callable[[np.ndarray, float], np.ndarray], y: np.ndarray, s: float, h: float,
              grid: SphereGrid, diffusion: float) -> np.ndarray:
    """
    ARS(2,2,2): the stiff part L = D Lap_sigma is implicit, F - L explicit.
    The implicit solve is diagonal in spectral space.
    """
    gamma = ImexGamma
    delta = ImexDelta
    shrink = 1.0 / (1.0 + h * gamma * diffusion * grid.degree * (grid.degree + 1.0)) - 1.0

    def stiff(x):
        return diffusion * grid.laplacian(x)

    def solve(rhs):
        return rhs + grid.synthesize(grid.analyze(rhs) * shrink)

    n1 = F(y, s) - stiff(y)
    y2 = solve(y + h * gamma * n1)
    n2 = F(y2, s + gamma * h) - stiff(y2)
    return solve(y + h * (delta * n1 + (1.0 - delta) * n2) + h * (1.0 - gamma) * stiff(y2))


# ----------------------------------------------------------------------
# Driver
# ----------------------------------------------------------------------

RATE_STENCIL = 5


class _RateTrail:
    """
    du/ds at each snapshot from the integrator's own steps around it.

    The last RATE_STENCIL step states are kept; a snapshot is settled once
    two steps past it exist (one-sided stencils at the ends of the run).
    """

    def __init__(self, count: int):
        self.points = deque(maxlen=RATE_STENCIL)
        self.rates: List[Optional[np.ndarray]] = [None] * count
        self.waiting: List[int] = []

    def push(self, s: float, u: np.ndarray, snapshot: Optional[int] = None) -> None:
        self.points.append((s, u.copy(), snapshot))
        if snapshot is not None:
            self.waiting.append(snapshot)
        if len(self.points) < RATE_STENCIL:
            return
        while self.waiting and len(self.points) - 1 - self._position(self.waiting[0]) >= 2:
            self._settle(self.waiting.pop(0))

    def _position(self, snapshot: int) -> int:
        for i, point in enumerate(self.points):
            if point[2] == snapshot:
                return i
        raise NumericalError(f"snapshot {snapshot} fell out of the rate stencil")

    def _settle(self, snapshot: int) -> None:
        nodes = [point[0] for point in self.points]
        weights = finite_difference_weights(nodes[self._position(snapshot)], nodes)
        values = np.stack([point[1] for point in self.points])
        self.rates[snapshot] = np.tensordot(weights, values, axes=(0, 0))

    def finish(self) -> np.ndarray:
        if len(self.points) < 2:
            raise NumericalError("no steps taken; snapshot rates undefined")
        while self.waiting:
            self._settle(self.waiting.pop(0))
        return np.stack(self.rates)


def _snapshot_grid(t_start: float, t_end: float, controls: EvolverControls) -> np.ndarray:
    if controls.snapshot_times:
        inner = [t for t in controls.snapshot_times if t_start < t < t_end]
        return np.log(np.array(sorted(set([t_start] + inner + [t_end]))))
    s0 = math.log(t_start)
    s1 = math.log(t_end)
    interval = controls.snapshot_every * controls.ds
    count = max(1, math.ceil((s1 - s0) / interval - 1e-9))
    return np.linspace(s0, s1, count + 1)


def _check_admissibility(phi: Field, admissibility: Optional[AdmissibilityK], controls: EvolverControls,
                         t_start: float) -> None:
    if admissibility is None:
        return
    if admissibility.value <= 0.0:
        logger.warning("K = 0: no upper bound on the initial lapse")
        return
    top = phi.max()
    if top >= admissibility.phi_bound:
        if controls.override_k:
            logger.warning("max phi = %.6g exceeds 1/sqrt(K) = %.6g; proceeding on override",
                           top, admissibility.phi_bound)
        else:
            raise HypothesisError("initial lapse below 1/sqrt(K)", t_start, top)


def evolve(branch, phi: Field, t_end: float, controls: EvolverControls,
           admissibility: Optional[AdmissibilityK] = None, t_start: float = 1.0,
           provenance: Optional[Dict] = None) -> SolutionRecord:
    """Integrate from u(t_start) = phi to t_end and return the snapshots."""
    grid = branch.grid
    if phi.grid != grid:
        raise GridError("initial lapse lives on a different grid")
    _require_positive(phi, t_start)
    _check_admissibility(phi, admissibility, controls, t_start)
    if t_end <= t_start:
        raise ValueError("t_end must exceed the start time")

    w_form = controls.form == "w"

    def to_u(y):
        return y ** -0.5 if w_form else y

    def F(y, s):
        t = math.exp(s)
        return t * (branch.rhs_w(y, t) if w_form else branch.rhs(y, t))

    lmax = grid.lmax
    spectral_radius = lmax * (lmax + 1.0)

    def cfl_limit(y, s):
        if controls.stepper == "imex":
            return math.inf
        return controls.safety * RK4_STABILITY_RADIUS / (branch.diffusion(to_u(y), math.exp(s)) * spectral_radius)

    s_snap = _snapshot_grid(t_start, t_end, controls)
    y = phi.values ** -2 if w_form else phi.values.copy()
    snapshots: List[np.ndarray] = [to_u(y).copy()]
    trail = _RateTrail(s_snap.size)
    trail.push(float(s_snap[0]), to_u(y), 0)
    diagnostics: List[Dict] = [_snapshot_diagnostics(branch, to_u(y), t_start, 0.0, 0, 0.0)]

    for k in range(s_snap.size - 1):
        s = float(s_snap[k])
        target = float(s_snap[k + 1])
        limit = cfl_limit(y, s)
        if limit < MIN_DS:
            raise NumericalError(f"CFL collapse at t={math.exp(s):.6g}: admissible ds={limit:.3g}")
        steps = max(1, math.ceil((target - s) / min(controls.ds, limit) - 1e-9))
        h = (target - s) / steps
        taken = 0
        while taken < steps:
            if controls.stepper == "imex":
                frozen = branch.diffusion(to_u(y), math.exp(s))
                y = imex_step(F, y, s, h, grid, frozen)
            else:
                y = rk4_step(F, y, s, h)
            taken += 1
            s = target if taken == steps else s + h
            if controls.dealias:
                y = grid.truncate(y)
            u = to_u(y)
            if not np.all(np.isfinite(u)):
                raise NumericalError(f"non-finite lapse at t={math.exp(s):.6g}")
            low = float(np.min(u))
            if low <= 0.0:
                raise PositivityError(math.exp(s), low)
            trail.push(s, u, k + 1 if taken == steps else None)
            if taken < steps:
                limit = cfl_limit(y, s)
                if h > limit:
                    if limit < MIN_DS:
                        raise NumericalError(f"CFL collapse at t={math.exp(s):.6g}: admissible ds={limit:.3g}")
                    remaining = target - s
                    steps = taken + max(1, math.ceil(remaining / limit - 1e-9))
                    h = remaining / (steps - taken)
        u = to_u(y)
        t = math.exp(target)
        ratio = 0.0 if controls.stepper == "imex" else h / cfl_limit(y, target)
        snapshots.append(u.copy())
        diagnostics.append(_snapshot_diagnostics(branch, u, t, h, taken, ratio))
        logger.debug("Snapshot t=%.6g after %d substeps (h=%.3g)", t, taken, h)

    times = np.exp(s_snap)
    times[0] = t_start
    times[-1] = t_end
    u_dot = trail.finish() / times[:, None, None]
    record = SolutionRecord(
        branch.kind,
        grid,
        times,
        np.stack(snapshots),
        diagnostics=diagnostics,
        provenance={**(provenance or {}), **branch.describe(), "stepper": controls.stepper,
                    "form": controls.form, "ds": controls.ds},
        branch=branch,
        u_dot=u_dot,
        scaled=isinstance(branch, ScaledBranch),
    )
    logger.info("Evolved %s branch to t=%.4g: %d snapshots", branch.kind, t_end, len(record))
    return record


def _snapshot_diagnostics(branch, u: np.ndarray, t: float, h: float, substeps: int, ratio: float) -> Dict:
    w = u ** -2
    residual = float(np.max(np.abs(t * branch.rhs(u, t))))
    return {
        "t": t,
        "min_w": float(np.min(w)),
        "max_w": float(np.max(w)),
        "step": h,
        "substeps": substeps,
        "cfl_ratio": ratio,
        "residual": residual,
    }
