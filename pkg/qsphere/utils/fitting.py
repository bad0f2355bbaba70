"""
Regression fits, observed convergence orders, Richardson extrapolation and
finite-difference weights shared by the audits.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from ..core.errors import ExtrapolationError


class LineFit:
    """Least-squares line y = intercept + slope * x with its diagnostics."""

    def __init__(self, slope: float, intercept: float, r2: float, n: int,
                 slope_stderr: float = 0.0, intercept_stderr: float = 0.0):
        self.slope = float(slope)
        self.intercept = float(intercept)
        self.r2 = float(r2)
        self.n = int(n)
        self.slope_stderr = float(slope_stderr)
        self.intercept_stderr = float(intercept_stderr)

    def to_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "n": self.n,
            "slope_stderr": self.slope_stderr,
            "intercept_stderr": self.intercept_stderr,
        }


def line_fit(x: Sequence[float], y: Sequence[float]) -> LineFit:
    """
    Fit a straight line with scipy's linregress.

    Constant data is a perfect fit (R^2 = 1, zero slope) rather than the
    undefined correlation linregress would report.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("line fit needs at least two samples")
    scale = max(1.0, float(np.max(np.abs(y))))
    if np.ptp(y) <= 1e-14 * scale:
        return LineFit(0.0, float(np.mean(y)), 1.0, x.size)
    if x.size == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return LineFit(slope, y[0] - slope * x[0], 1.0, 2)
    result = stats.linregress(x, y)
    return LineFit(
        result.slope,
        result.intercept,
        result.rvalue ** 2,
        x.size,
        result.stderr,
        getattr(result, "intercept_stderr", 0.0),
    )


def power_law_fit(t: Sequence[float], y: Sequence[float], floor: float = 0.0) -> Optional[LineFit]:
    """
    Fit y ~ C t^slope in log-log space over the samples with y > floor.

    Returns None when fewer than two samples clear the floor.
    """
    t = np.asarray(t, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    keep = y > floor
    if np.count_nonzero(keep) < 2:
        return None
    return line_fit(np.log(t[keep]), np.log(y[keep]))


def exponential_rate_fit(t: Sequence[float], y: Sequence[float], floor: float) -> Optional[LineFit]:
    """Fit y ~ C e^{-lambda t}; the returned slope is -lambda."""
    t = np.asarray(t, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    keep = y > floor
    if np.count_nonzero(keep) < 3:
        return None
    return line_fit(t[keep], np.log(y[keep]))


class TailIntegral:
    """Quadrature of g over [t_0, t_max] plus a power-law tail estimate."""

    def __init__(self, finite_part: float, exponent: Optional[float], r2: float,
                 tail: float, verdict: str):
        self.finite_part = finite_part
        self.exponent = exponent
        self.r2 = r2
        self.tail = tail
        self.verdict = verdict

    @property
    def total(self) -> float:
        return self.finite_part + self.tail


def tail_integral(t: np.ndarray, g: np.ndarray, min_r2: float, floor: float = 1e-14) -> TailIntegral:
    """
    Decide integrability of g on [t_0, inf) from samples up to t_max.

    The tail is fitted as c t^{-p} on the last decade of samples; the
    integrand counts as integrable when p > 1 with R^2 >= min_r2.
    """
    t = np.asarray(t, dtype=float)
    g = np.abs(np.asarray(g, dtype=float))
    finite_part = float(trapezoid(g, t))
    window = t >= t[-1] / 10.0
    if np.all(g[window] <= floor):
        return TailIntegral(finite_part, math.inf, 1.0, 0.0, "pass")
    positive = window & (g > floor)
    if np.count_nonzero(positive) < 3:
        return TailIntegral(finite_part, None, 0.0, math.inf, "indeterminate")
    fit = line_fit(np.log(t[positive]), np.log(g[positive]))
    p = -fit.slope
    if fit.r2 < min_r2:
        return TailIntegral(finite_part, p, fit.r2, math.inf, "indeterminate")
    if p <= 1.0:
        return TailIntegral(finite_part, p, fit.r2, math.inf, "fail")
    c = math.exp(fit.intercept)
    tail = c * t[-1] ** (1.0 - p) / (p - 1.0)
    return TailIntegral(finite_part, p, fit.r2, tail, "pass")


def observed_orders(errors: Sequence[float], ratio: float = 2.0) -> List[Optional[float]]:
    """log(e_k / e_{k+1}) / log(ratio) for successive refinement levels."""
    orders: List[Optional[float]] = []
    for coarse, fine in zip(errors[:-1], errors[1:]):
        if coarse > 0.0 and fine > 0.0:
            orders.append(math.log(coarse / fine) / math.log(ratio))
        else:
            orders.append(None)
    return orders


def richardson_step(coarse: np.ndarray, fine: np.ndarray, ratio: float, order: float) -> np.ndarray:
    """One Richardson step: fine + (fine - coarse) / (ratio^order - 1)."""
    return fine + (fine - coarse) / (ratio ** order - 1.0)


def richardson_extrapolate(levels: Sequence[np.ndarray], ratio: float,
                           floor: float = 1e-12) -> Tuple[np.ndarray, Optional[float]]:
    """
    Extrapolate a sequence computed at parameters h, h/r, h/r^2, ... to h = 0.

    With three or more levels the order is observed from the last three;
    with two levels first order is assumed.  Returns (limit, order); order
    is None when the levels already agree to within ``floor``.
    """
    if len(levels) < 2:
        raise ExtrapolationError("Richardson extrapolation needs at least two levels")
    if len(levels) == 2:
        coarse, fine = levels
        if np.max(np.abs(fine - coarse)) <= floor:
            return fine.copy(), None
        return richardson_step(coarse, fine, ratio, 1.0), 1.0
    w1, w2, w3 = levels[-3:]
    d12 = float(np.max(np.abs(w1 - w2)))
    d23 = float(np.max(np.abs(w2 - w3)))
    if d12 <= floor and d23 <= floor:
        return w3.copy(), None
    if d23 >= d12:
        raise ExtrapolationError(
            f"epsilon-ladder differences not decreasing ({d12:.3e} -> {d23:.3e})"
        )
    if d23 <= floor:
        return w3.copy(), None
    order = math.log(d12 / d23) / math.log(ratio)
    return richardson_step(w2, w3, ratio, order), order


def geometric_ratio(ladder: Sequence[float], rtol: float = 1e-6) -> float:
    """Common ratio h_k / h_{k+1} of a refinement ladder; ValueError if it varies."""
    ratios = [a / b for a, b in zip(ladder[:-1], ladder[1:])]
    if not ratios:
        raise ValueError("a ladder needs at least two levels")
    if any(abs(r - ratios[0]) > rtol * ratios[0] for r in ratios):
        raise ValueError(f"ladder is not geometric (ratios {', '.join(f'{r:.6g}' for r in ratios)})")
    return ratios[0]


def finite_difference_weights(x0: float, nodes: Sequence[float], derivative: int = 1) -> np.ndarray:
    """
    Weights w_j with sum_j w_j f(x_j) ~ f^(derivative)(x0), exact for
    polynomials of degree len(nodes) - 1.
    """
    nodes = np.asarray(nodes, dtype=float)
    scale = float(np.max(np.abs(nodes - x0))) or 1.0
    offsets = (nodes - x0) / scale
    n = nodes.size
    vander = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[derivative] = math.factorial(derivative)
    return np.linalg.solve(vander, rhs) / scale ** derivative


def stencil_derivative(x: np.ndarray, values: np.ndarray) -> np.ndarray:
    """
    First derivative along axis 0 of samples on a (possibly uneven) grid.

    Five-point stencils are used when at least five samples exist, three
    points otherwise; stencils slide inwards at the ends.
    """
    x = np.asarray(x, dtype=float)
    values = np.asarray(values, dtype=float)
    n = x.size
    if n < 3:
        raise ValueError("derivative needs at least three samples")
    width = 5 if n >= 5 else 3
    half = width // 2
    out = np.empty_like(values)
    for k in range(n):
        start = min(max(k - half, 0), n - width)
        idx = slice(start, start + width)
        weights = finite_difference_weights(x[k], x[idx])
        out[k] = np.tensordot(weights, values[idx], axes=(0, 0))
    return out
