"""
Prescribed scalar curvature R-bar(t, x) presets.
"""

import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from ..utils.io import read_qsf
from .errors import CoverageError, GridError
from .sphere_ops import Field, SphereGrid


logger = logging.getLogger(__name__)


class PrescribedCurvature:
    """Base class; subclasses implement ``_values``."""

    kind = "base"

    def __init__(self, grid: SphereGrid, label: Optional[str] = None):
        self.grid = grid
        self.label = label or self.kind

    def eval(self, t: float) -> Field:
        return Field(self.grid, self._values(float(t)))

    def _values(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def minimum(self, times: Sequence[float]) -> float:
        return float(min(np.min(self._values(float(t))) for t in times))

    def is_nonnegative(self, times: Sequence[float], tol: float = 0.0) -> bool:
        return self.minimum(times) >= -tol

    def is_zero(self) -> bool:
        return False

    def describe(self) -> dict:
        return {"kind": self.kind, "label": self.label}


class ZeroCurvature(PrescribedCurvature):
    """R-bar identically zero."""

    kind = "zero"

    def _values(self, t: float) -> np.ndarray:
        return np.zeros(self.grid.shape)

    def is_zero(self) -> bool:
        return True


class PowerCurvature(PrescribedCurvature):
    """
    R-bar = c t^{-p} (1 + kappa Y_2^0 / max|Y_2^0|).

    kappa = 0 gives the spatially constant preset.
    """

    kind = "power"

    def __init__(self, grid: SphereGrid, amplitude: float, exponent: float,
                 kappa: float = 0.0, offset: float = 0.0, offset_exponent: float = 2.0,
                 label: Optional[str] = None):
        super().__init__(grid, label)
        self.amplitude = float(amplitude)
        self.exponent = float(exponent)
        self.kappa = float(kappa)
        self.offset = float(offset)
        self.offset_exponent = float(offset_exponent)
        y20 = grid.ylm_real(2, 0)
        self._shape = 1.0 + self.kappa * y20 / np.max(np.abs(y20))

    def _values(self, t: float) -> np.ndarray:
        return (self.offset * t ** (-self.offset_exponent)
                + self.amplitude * t ** (-self.exponent) * self._shape)

    def is_zero(self) -> bool:
        return self.amplitude == 0.0 and self.offset == 0.0

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "label": self.label,
            "amplitude": self.amplitude,
            "exponent": self.exponent,
            "kappa": self.kappa,
            "offset": self.offset,
            "offset_exponent": self.offset_exponent,
        }


class TabulatedCurvature(PrescribedCurvature):
    """Samples in t with monotone cubic interpolation between them."""

    kind = "tabulated"

    def __init__(self, grid: SphereGrid, times: Sequence[float], samples: np.ndarray,
                 label: Optional[str] = None):
        super().__init__(grid, label)
        self.times = np.asarray(times, dtype=float)
        samples = np.asarray(samples, dtype=float)
        if samples.shape[1:] != grid.shape:
            raise GridError(f"tabulated samples have shape {samples.shape[1:]}, grid is {grid.shape}")
        self._interp = PchipInterpolator(self.times, samples, axis=0)

    @classmethod
    def from_directory(cls, directory, grid: SphereGrid) -> "TabulatedCurvature":
        """Load QSF1 samples listed in ``manifest.json`` (keys: times, files)."""
        directory = Path(directory)
        with open(directory / "manifest.json", "r", encoding="utf-8") as handle:
            manifest = json.load(handle)
        samples = np.stack([read_qsf(directory / name) for name in manifest["files"]])
        logger.info("Loaded %d tabulated curvature samples from %s", len(manifest["files"]), directory)
        return cls(grid, manifest["times"], samples, label=manifest.get("label", directory.name))

    def _values(self, t: float) -> np.ndarray:
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise CoverageError(t, float(self.times[0]), float(self.times[-1]))
        return np.asarray(self._interp(np.clip(t, self.times[0], self.times[-1])))

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "label": self.label,
            "t_min": float(self.times[0]),
            "t_max": float(self.times[-1]),
        }
