"""
Exception hierarchy.

Every error carries the process exit status the CLI reports for it.
"""

from typing import Optional


class QsphereError(Exception):
    """Base class for all qsphere failures."""

    exit_code = 4


class ConfigError(QsphereError):
    """Scenario configuration could not be parsed or resolved."""

    exit_code = 2


class GridError(QsphereError):
    """Resolution too low, or fields living on different grids."""

    exit_code = 4


class HypothesisError(QsphereError):
    """A hard hypothesis of the construction fails on the sampled range."""

    exit_code = 3

    def __init__(self, condition: str, t: Optional[float] = None, value: Optional[float] = None):
        self.condition = condition
        self.t = t
        self.value = value
        where = f" at t={t:.6g}" if t is not None else ""
        got = f" (value {value:.6g})" if value is not None else ""
        super().__init__(f"{condition} violated{where}{got}")


class NumericalError(QsphereError):
    """Non-finite values, CFL collapse or solver breakdown."""

    exit_code = 4


class PositivityError(NumericalError):
    """The lapse left (0, inf)."""

    def __init__(self, t: float, minimum: float):
        self.t = t
        self.minimum = minimum
        super().__init__(f"lapse lost positivity at t={t:.6g} (min u = {minimum:.6g})")


class StabilityError(NumericalError):
    """A Ricci flow step produced NaN or a nonpositive metric component."""

    def __init__(self, t: float, dt: float):
        self.t = t
        self.dt = dt
        super().__init__(f"Ricci flow step unstable at t={t:.6g} with dt={dt:.3g}")


class CoverageError(NumericalError):
    """Requested time lies outside the sampled or tabulated range."""

    def __init__(self, t: float, t_min: float, t_max: float):
        self.t = t
        self.t_min = t_min
        self.t_max = t_max
        super().__init__(f"t={t:.6g} outside covered range [{t_min:.6g}, {t_max:.6g}]")


class ExtrapolationError(NumericalError):
    """Successive epsilon-ladder differences fail to decrease."""


class AuditFailure(QsphereError):
    """A hard audit did not pass."""

    exit_code = 5

    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__("audit failed: " + ", ".join(self.failures))
