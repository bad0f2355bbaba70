"""
Forward sweep for linear relaxation equations in log time.

Solves d(delta)/ds = P(s) - lam(s) * delta on a sample grid in one pass.
Each step holds lam at its interval average and treats P as linear, which
is exact when both are constant.
"""

from typing import Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid


_SERIES_CUTOFF = 1e-4


def _phi_weights(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """A = (1 - e^-z)/z and B = (z - 1 + e^-z)/z^2 with small-z series."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, z)
    em1 = -np.expm1(-safe)  # 1 - e^-z
    a = np.where(small, 1.0 - z / 2.0 + z * z / 6.0 - z ** 3 / 24.0, em1 / safe)
    b = np.where(
        small,
        0.5 - z / 6.0 + z * z / 24.0 - z ** 3 / 120.0,
        (safe - em1) / (safe * safe),
    )
    return a, b


def exponential_sweep(s: np.ndarray, source: np.ndarray, rate: np.ndarray,
                      start: float = 0.0) -> np.ndarray:
    """
    Integrate d(delta)/ds = source - rate * delta from delta(s[0]) = start.

    Args:
        s: strictly increasing sample points
        source: P at the samples
        rate: lam at the samples
        start: initial value

    Returns:
        delta at every sample
    """
    s = np.asarray(s, dtype=float)
    source = np.asarray(source, dtype=float)
    rate = np.asarray(rate, dtype=float)
    h = np.diff(s)
    z = 0.5 * (rate[1:] + rate[:-1]) * h
    decay = np.exp(-z)
    a, b = _phi_weights(z)
    gain = h * (source[:-1] * a + (source[1:] - source[:-1]) * b)
    delta = np.empty_like(s)
    delta[0] = start
    for k in range(h.size):
        delta[k + 1] = decay[k] * delta[k] + gain[k]
    return delta


def exponent_accumulator(s: np.ndarray, rate: np.ndarray) -> np.ndarray:
    """Running integral of rate ds, zero at s[0]."""
    return cumulative_trapezoid(rate, s, initial=0.0)


def refine_grid(s: np.ndarray, density: int) -> np.ndarray:
    """Insert density - 1 evenly spaced points inside each interval of s."""
    s = np.asarray(s, dtype=float)
    if density <= 1 or s.size < 2:
        return s.copy()
    pieces = [np.linspace(s[k], s[k + 1], density + 1)[:-1] for k in range(s.size - 1)]
    pieces.append(s[-1:])
    return np.concatenate(pieces)
