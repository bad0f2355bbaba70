"""
Scenario configuration models
"""

from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..config.settings import (
    DEFAULT_DS,
    DEFAULT_EPS_LADDER,
    DEFAULT_ETA,
    DEFAULT_SAFETY,
    DEFAULT_SNAPSHOT_EVERY,
    MIN_NLAT,
    RICCI_FLOW_SAFETY,
)
from ..core.errors import ConfigError
from ..utils.fitting import geometric_ratio


SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EvolverControls(_Strict):
    """Time-integration controls shared by every run of a scenario."""

    ds: float = Field(DEFAULT_DS, gt=0.0)
    safety: float = Field(DEFAULT_SAFETY, gt=0.0, le=1.0)
    stepper: Literal["rk4", "imex"] = "rk4"
    snapshot_every: int = Field(DEFAULT_SNAPSHOT_EVERY, ge=1)
    snapshot_times: Optional[List[float]] = None
    form: Literal["u", "w"] = "u"
    dealias: bool = False
    override_k: bool = False


class FoliationSpec(_Strict):
    kind: Literal["round", "constant", "power", "log", "tabulated"] = "round"
    value: float = 0.0
    amplitude: float = 0.0
    exponent: float = Field(1.0, ge=1.0)
    degree: int = Field(2, ge=0)
    order: int = Field(0, ge=0)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _needs_path(self):
        if self.kind == "tabulated" and not self.path:
            raise ValueError("tabulated foliation needs a path")
        if self.order > self.degree:
            raise ValueError("harmonic order exceeds degree")
        return self


class RicciSpec(_Strict):
    initial: Literal["round", "ellipsoid", "file"] = "round"
    axis_ratio: float = Field(1.2, gt=0.0)
    path: Optional[str] = None
    safety: float = Field(RICCI_FLOW_SAFETY, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _needs_path(self):
        if self.initial == "file" and not self.path:
            raise ValueError("initial metric from file needs a path")
        return self


class CurvatureSpec(_Strict):
    kind: Literal["zero", "power", "power-y", "tabulated"] = "zero"
    amplitude: float = 0.0
    exponent: float = 2.0
    kappa: float = 0.0
    offset: float = 0.0
    offset_exponent: float = 2.0
    path: Optional[str] = None

    @model_validator(mode="after")
    def _needs_path(self):
        if self.kind == "tabulated" and not self.path:
            raise ValueError("tabulated curvature needs a path")
        return self


class HarmonicTerm(_Strict):
    degree: int = Field(ge=0)
    order: int = Field(0, ge=0)
    amplitude: float


class LapseSpec(_Strict):
    """
    Initial lapse phi.

    ``constant``: phi = value.  ``harmonics``: phi = value * (1 + sum of
    amplitude * Y_l^m / max|Y_l^m|), optionally plus a seeded random
    combination of degrees 1..3 scaled by ``random_amplitude``.
    ``file``: QSF1 snapshot.  ``horizon``: built from the envelopes.
    """

    kind: Literal["constant", "harmonics", "file", "horizon"] = "constant"
    value: float = Field(1.0, gt=0.0)
    terms: List[HarmonicTerm] = Field(default_factory=list)
    random_amplitude: float = Field(0.0, ge=0.0)
    path: Optional[str] = None
    eps_ladder: List[float] = Field(default_factory=lambda: list(DEFAULT_EPS_LADDER))
    eta: float = Field(DEFAULT_ETA, gt=0.0, lt=1.0)

    @field_validator("eps_ladder")
    @classmethod
    def _decreasing(cls, value):
        if len(value) < 2:
            raise ValueError("epsilon ladder needs at least two levels")
        if any(not 0.0 < eps < 1.0 for eps in value):
            raise ValueError("epsilon values must lie in (0, 1)")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError("epsilon ladder must be strictly decreasing")
        geometric_ratio(value)
        return value

    @model_validator(mode="after")
    def _needs_path(self):
        if self.kind == "file" and not self.path:
            raise ValueError("lapse from file needs a path")
        return self


class ScenarioConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str
    branch: Literal["conformal", "ricci"] = "conformal"
    theorem: str = ""
    description: str = ""
    foliation: FoliationSpec = Field(default_factory=FoliationSpec)
    ricci: RicciSpec = Field(default_factory=RicciSpec)
    curvature: CurvatureSpec = Field(default_factory=CurvatureSpec)
    lapse: LapseSpec = Field(default_factory=LapseSpec)
    resolutions: List[int] = Field(default_factory=lambda: [16])
    nlon_factor: int = Field(2, ge=2)
    t_end: float = Field(20.0, gt=1.0)
    controls: EvolverControls = Field(default_factory=EvolverControls)
    out_dir: Optional[str] = None
    seed: int = 0

    @field_validator("resolutions")
    @classmethod
    def _increasing(cls, value):
        if not value:
            raise ValueError("resolution ladder is empty")
        if any(n < MIN_NLAT for n in value):
            raise ValueError(f"every resolution must be at least {MIN_NLAT}")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("resolution ladder must be strictly increasing")
        return value

    @property
    def is_horizon(self) -> bool:
        return self.lapse.kind == "horizon"


def load_config(path) -> ScenarioConfig:
    """Parse a JSON scenario file; every failure becomes ConfigError."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    try:
        return ScenarioConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}")
