"""
Discretization of the unit 2-sphere with its round metric sigma.

Gauss-Legendre nodes in x = cos(theta) times equispaced longitudes give
exact quadrature for band-limited products; spherical-harmonic transforms
run an associated-Legendre recurrence in latitude and an FFT in longitude.
Coefficients use orthonormal harmonics with the Condon-Shortley phase and
are stored for m >= 0 only.
"""

import logging
import math
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from ..config.settings import MIN_NLAT
from ..utils.io import read_qsf, write_qsf
from .errors import GridError, NumericalError


logger = logging.getLogger(__name__)


def _legendre_tables(lmax: int, x: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Normalized associated Legendre functions and their theta-derivatives.

    Returns arrays indexed [m, l, node]; entries with m > l are zero.
    """
    size = lmax + 1
    p = np.zeros((size, size, x.size))
    pmm = np.full(x.size, 1.0 / math.sqrt(4.0 * math.pi))
    for m in range(size):
        if m > 0:
            pmm = -math.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * pmm
        p[m, m] = pmm
        if m + 1 <= lmax:
            p[m, m + 1] = math.sqrt(2.0 * m + 3.0) * x * pmm
        for l in range(m + 2, size):
            a_l = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            a_prev = math.sqrt((4.0 * (l - 1) ** 2 - 1.0) / ((l - 1) ** 2 - m * m))
            p[m, l] = a_l * (x * p[m, l - 1] - p[m, l - 2] / a_prev)

    dp = np.zeros_like(p)
    for m in range(size):
        for l in range(m, size):
            term = l * x * p[m, l]
            if l > m:
                term = term - math.sqrt((2.0 * l + 1.0) * (l * l - m * m) / (2.0 * l - 1.0)) * p[m, l - 1]
            dp[m, l] = term / s
    return p, dp


class SphereGrid:
    """
    Gauss-Legendre x equispaced-longitude grid with a transform plan.

    Immutable after construction; safe to share across threads.  Nodes are
    ordered north to south (cos(theta) decreasing).
    """

    def __init__(self, nlat: int, nlon: int):
        nlat = int(nlat)
        nlon = int(nlon)
        if nlat < MIN_NLAT:
            raise GridError(f"nlat={nlat} below minimum {MIN_NLAT}")
        if nlon < 2 * nlat:
            raise GridError(f"nlon={nlon} must be at least 2*nlat={2 * nlat}")
        self.nlat = nlat
        self.nlon = nlon
        self.lmax = nlat - 1
        self.shape = (nlat, nlon)

        x, w = leggauss(nlat)
        order = np.argsort(-x)
        self.cos_theta = x[order]
        self.gauss_weights = w[order]
        self.sin_theta = np.sqrt(1.0 - self.cos_theta ** 2)
        self.theta = np.arccos(self.cos_theta)
        self.phi = 2.0 * math.pi * np.arange(nlon) / nlon
        self.weights = np.outer(self.gauss_weights, np.full(nlon, 2.0 * math.pi / nlon))

        size = self.lmax + 1
        degree = np.arange(size, dtype=float)
        self.degree = np.repeat(degree[:, None], size, axis=1)  # [l, m]
        self.order = np.repeat(degree[None, :], size, axis=0)  # [l, m]
        self.band_mask = self.order <= self.degree
        self.laplace_eigenvalues = -self.degree * (self.degree + 1.0)

        plm, dplm = _legendre_tables(self.lmax, self.cos_theta, self.sin_theta)
        s = self.sin_theta
        c = self.cos_theta
        m_col = degree[:, None, None]  # indexed by the leading m axis
        l_col = degree[None, :, None]
        self._plm = plm
        self._dplm = dplm
        self._plm_over_sin = plm / s
        self._hess_tt = -(c / s) * dplm - (l_col * (l_col + 1.0) - m_col ** 2 / s ** 2) * plm
        self._hess_tp = dplm / s - c * plm / s ** 2

        for arr in (self.cos_theta, self.gauss_weights, self.sin_theta, self.theta, self.phi,
                    self.weights, self.degree, self.order, self.band_mask, self.laplace_eigenvalues,
                    self._plm, self._dplm, self._plm_over_sin, self._hess_tt, self._hess_tp):
            arr.setflags(write=False)
        logger.debug("Built sphere grid nlat=%d nlon=%d lmax=%d", nlat, nlon, self.lmax)

    def __eq__(self, other) -> bool:
        return isinstance(other, SphereGrid) and (self.nlat, self.nlon) == (other.nlat, other.nlon)

    def __hash__(self) -> int:
        return hash((self.nlat, self.nlon))

    def __repr__(self) -> str:
        return f"SphereGrid(nlat={self.nlat}, nlon={self.nlon})"

    @property
    def size(self) -> int:
        return self.nlat * self.nlon

    # ------------------------------------------------------------------
    # Array-level transforms
    # ------------------------------------------------------------------

    def analyze(self, values: np.ndarray) -> np.ndarray:
        """Grid values -> coefficients c[l, m] for m >= 0."""
        size = self.lmax + 1
        fourier = np.fft.rfft(values, axis=1)[:, :size] * (2.0 * math.pi / self.nlon)
        return np.einsum("mli,i,im->lm", self._plm, self.gauss_weights, fourier)

    def synthesize(self, coeffs: np.ndarray, basis: Optional[np.ndarray] = None) -> np.ndarray:
        """Coefficients c[l, m] -> real grid values, optionally against another latitude basis."""
        basis = self._plm if basis is None else basis
        size = self.lmax + 1
        partial = np.einsum("mli,lm->im", basis, coeffs)
        spectrum = np.zeros((self.nlat, self.nlon // 2 + 1), dtype=complex)
        spectrum[:, :size] = partial * self.nlon
        return np.fft.irfft(spectrum, n=self.nlon, axis=1)

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        return self.synthesize(self.analyze(values) * self.laplace_eigenvalues)

    def theta_derivative(self, values: np.ndarray) -> np.ndarray:
        return self.synthesize(self.analyze(values), self._dplm)

    def phi_second_derivative(self, values: np.ndarray) -> np.ndarray:
        return self.synthesize(self.analyze(values) * (-self.order ** 2))

    def gradient(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        coeffs = self.analyze(values)
        return (
            self.synthesize(coeffs, self._dplm),
            self.synthesize(coeffs * (1j * self.order), self._plm_over_sin),
        )

    def grad_norm_sq(self, values: np.ndarray) -> np.ndarray:
        g_theta, g_phi = self.gradient(values)
        return g_theta ** 2 + g_phi ** 2

    def hessian(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal-frame Hessian components (theta-theta, theta-phi, phi-phi)."""
        coeffs = self.analyze(values)
        h_tt = self.synthesize(coeffs, self._hess_tt)
        h_tp = self.synthesize(coeffs * (1j * self.order), self._hess_tp)
        lap = self.synthesize(coeffs * self.laplace_eigenvalues)
        return h_tt, h_tp, lap - h_tt

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))

    def mean(self, values: np.ndarray) -> float:
        return self.integrate(values) / (4.0 * math.pi)

    def truncate(self, values: np.ndarray, fraction: float = 2.0 / 3.0) -> np.ndarray:
        """Project onto degrees l <= fraction * lmax."""
        coeffs = self.analyze(values)
        cutoff = math.floor(fraction * self.lmax)
        coeffs = np.where(self.degree <= cutoff, coeffs, 0.0)
        return self.synthesize(coeffs)

    def ylm_real(self, l: int, m: int) -> np.ndarray:
        """Real part of the orthonormal harmonic Y_l^m on the nodes (m >= 0)."""
        if not 0 <= m <= l <= self.lmax:
            raise GridError(f"Y_{l}^{m} not representable with lmax={self.lmax}")
        return np.outer(self._plm[m, l], np.cos(m * self.phi))

    def spacing(self) -> float:
        """Largest angular gap between neighbouring nodes."""
        theta = np.concatenate(([0.0], self.theta, [math.pi]))
        return float(max(np.max(np.diff(theta)), 2.0 * math.pi / self.nlon))


class Field:
    """Real scalar function sampled on a SphereGrid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: SphereGrid, values, check: bool = True):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            values = np.broadcast_to(values, grid.shape)
        values = np.array(values, dtype=float)
        if check and not np.all(np.isfinite(values)):
            raise NumericalError("field contains non-finite values")
        self.grid = grid
        self.values = values

    @classmethod
    def constant(cls, grid: SphereGrid, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: SphereGrid, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "Field":
        theta, phi = np.meshgrid(grid.theta, grid.phi, indexing="ij")
        return cls(grid, fn(theta, phi))

    @classmethod
    def ylm_real(cls, grid: SphereGrid, l: int, m: int) -> "Field":
        return cls(grid, grid.ylm_real(l, m))

    def _operand(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise GridError(f"grid mismatch: {self.grid!r} vs {other.grid!r}")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._operand(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._operand(other))

    def __rsub__(self, other):
        return Field(self.grid, self._operand(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._operand(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._operand(other))

    def __rtruediv__(self, other):
        return Field(self.grid, self._operand(other) / self.values)

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __pow__(self, exponent):
        return Field(self.grid, self.values ** exponent)

    def min(self) -> float:
        return float(np.min(self.values))

    def max(self) -> float:
        return float(np.max(self.values))

    def mean(self) -> float:
        return self.grid.mean(self.values)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), check=False)

    def __repr__(self) -> str:
        return f"Field({self.grid!r}, min={self.min():.6g}, max={self.max():.6g})"


class SpectralCoeffs:
    """Spectral coefficients of a real field, stored for m >= 0."""

    def __init__(self, grid: SphereGrid, coeffs: np.ndarray):
        self.grid = grid
        self.coeffs = coeffs

    @property
    def lmax(self) -> int:
        return self.grid.lmax

    def coefficient(self, l: int, m: int) -> complex:
        """c_{l,m}; negative m follows c_{l,-m} = (-1)^m conj(c_{l,m})."""
        if abs(m) > l or l > self.lmax:
            raise GridError(f"(l={l}, m={m}) outside band limit {self.lmax}")
        if m >= 0:
            return complex(self.coeffs[l, m])
        return (-1) ** m * complex(np.conj(self.coeffs[l, -m]))


def _check_same(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise GridError(f"grid mismatch: {a.grid!r} vs {b.grid!r}")


def build_grid(nlat: int, nlon: int) -> SphereGrid:
    """Build a Gauss-Legendre grid with lmax = nlat - 1."""
    return SphereGrid(nlat, nlon)


def to_spectral(x: Field) -> SpectralCoeffs:
    return SpectralCoeffs(x.grid, x.grid.analyze(x.values))


def from_spectral(c: SpectralCoeffs) -> Field:
    return Field(c.grid, c.grid.synthesize(c.coeffs))


def laplacian_sigma(x: Field) -> Field:
    """Round-sphere Laplacian via multiplication by -l(l+1)."""
    return Field(x.grid, x.grid.laplacian(x.values))


def gradient_sigma(x: Field) -> Tuple[Field, Field]:
    """Components of grad x in the orthonormal (theta-hat, phi-hat) frame."""
    g_theta, g_phi = x.grid.gradient(x.values)
    return Field(x.grid, g_theta), Field(x.grid, g_phi)


def hessian_sigma(x: Field) -> Tuple[Field, Field, Field]:
    h_tt, h_tp, h_pp = x.grid.hessian(x.values)
    return Field(x.grid, h_tt), Field(x.grid, h_tp), Field(x.grid, h_pp)


def integrate_sigma(x: Field) -> float:
    return x.grid.integrate(x.values)


def field_extrema(x: Field) -> Tuple[float, float]:
    """
    (min, max) over grid nodes.

    This is the discrete stand-in for inf and sup over the leaf; it can miss
    the true extremum by O(h^2) where h is the grid spacing.
    """
    return x.min(), x.max()


def dealias(x: Field, fraction: float = 2.0 / 3.0) -> Field:
    return Field(x.grid, x.grid.truncate(x.values, fraction))


def inner_sigma(x: Field, y: Field) -> float:
    _check_same(x, y)
    return x.grid.integrate(x.values * y.values)


def write_field(path: Union[str, Path], x: Field) -> None:
    write_qsf(path, x.values)


def read_field(path: Union[str, Path], grid: SphereGrid) -> Field:
    values = read_qsf(path)
    if values.shape != grid.shape:
        raise GridError(f"stored field has shape {values.shape}, grid expects {grid.shape}")
    return Field(grid, values)
