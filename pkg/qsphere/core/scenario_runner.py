"""
Scenario orchestration: presets, the run pipeline and stored-record audits.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..config.settings import ADM_MIN_T_END, DEFAULT_OUT_DIR, ORACLE_TOL, RICCI_DS, RICCI_HORIZON_ETA, RICCI_NLAT
from ..models.record import RecordStore, SolutionRecord
from ..models.scenario import (
    CurvatureSpec,
    EvolverControls,
    FoliationSpec,
    HarmonicTerm,
    LapseSpec,
    RicciSpec,
    ScenarioConfig,
    load_config,
)
from .bounds_envelopes import (
    admissibility_json,
    constant_K_conformal,
    constant_K_ricci,
    envelope_check,
    envelope_trace_csv,
    envelopes_conformal,
    envelopes_ricci,
)
from .conformal_foliation import (
    ConformalFoliation,
    ConstantFoliation,
    LogFoliation,
    PowerFoliation,
    RoundFoliation,
    TabulatedFoliation,
    hypothesis_report,
)
from .errors import AuditFailure, ConfigError, HypothesisError, QsphereError
from .geometry_audit import (
    FLATNESS_NORMS,
    MASS_COLUMNS,
    adm_mass,
    attach_orders,
    flatness_report,
    mass_lower_bound_check,
    reconstruct_Rbar,
)
from .horizon import HorizonRun, horizon_evolve
from .parabolic_evolver import ConformalBranch, RicciBranch, evolve
from .prescribed_curvature import PowerCurvature, PrescribedCurvature, TabulatedCurvature, ZeroCurvature
from .ricci_flow_foliation import (
    AxiGrid,
    ellipsoid_metric,
    import_trajectory,
    round_metric,
    run_flow,
)
from .sphere_ops import Field, SphereGrid, read_field


logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# Preset registry
# ----------------------------------------------------------------------

class Preset:
    def __init__(self, name: str, theorem: str, description: str,
                 build: Callable[[Optional[str]], ScenarioConfig],
                 expected: Callable[[Optional[str]], Optional[str]], parameter: Optional[str] = None):
        self.name = name
        self.theorem = theorem
        self.description = description
        self.build = build
        self.expected = expected
        self.parameter = parameter

    def to_dict(self, param: Optional[str] = None) -> Dict:
        return {
            "name": self.name,
            "parameter": self.parameter,
            "theorem": self.theorem,
            "description": self.description,
            "expected": self.expected(param),
        }


THEOREM_CONFORMAL = "existence on conformally round foliations"
THEOREM_RICCI = "existence on the modified Ricci flow foliation"
THEOREM_RICCI_HORIZON = "horizon boundary, Hawking monotonicity and m >= 1/2 (Ricci flow)"
THEOREM_SCHWARZSCHILD = "round horizon data with zero curvature is exactly Schwarzschild"

HORIZON_LAPSE = LapseSpec(kind="horizon")
RICCI_HORIZON_LAPSE = LapseSpec(kind="horizon", eta=RICCI_HORIZON_ETA)


def _float_param(param: Optional[str], default: float, name: str) -> float:
    if param is None:
        return default
    try:
        return float(param)
    except ValueError:
        raise ConfigError(f"preset {name} expects a number, got {param!r}")


def _flat(param):
    return ScenarioConfig(name="flat", theorem=THEOREM_CONFORMAL,
                          description="round leaves, zero curvature, unit lapse: Euclidean space",
                          t_end=40.0, resolutions=[8, 16])


def _schwarzschild_family(param):
    c = _float_param(param, 0.8, "schwarzschild-family")
    if not c > 0.0:
        raise ConfigError("schwarzschild-family needs c > 0")
    return ScenarioConfig(name=f"schwarzschild-family-{c:g}", theorem=THEOREM_CONFORMAL,
                          description=f"round leaves, zero curvature, constant lapse {c:g}",
                          lapse=LapseSpec(kind="constant", value=c), t_end=40.0, resolutions=[8, 16])


def _schwarzschild_family_mass(param):
    c = _float_param(param, 0.8, "schwarzschild-family")
    return f"m = {(1.0 - c ** -2) / 2.0:.10g}"


def _schwarzschild_horizon(param):
    return ScenarioConfig(name="schwarzschild-horizon", theorem=THEOREM_SCHWARZSCHILD,
                          description="round leaves, zero curvature, horizon boundary",
                          lapse=HORIZON_LAPSE, t_end=40.0, resolutions=[16])


def _conformal_perturbation(param):
    p = _float_param(param, 2.0, "conformal-perturbation")
    if p < 1.0:
        raise ConfigError("conformal-perturbation needs p >= 1")
    return ScenarioConfig(
        name=f"conformal-perturbation-{p:g}",
        theorem=THEOREM_CONFORMAL,
        description=f"f = 0.1 Y_2^0 t^-{p:g}, zero curvature, perturbed lapse",
        foliation=FoliationSpec(kind="power", amplitude=0.1, exponent=p, degree=2, order=0),
        lapse=LapseSpec(kind="harmonics", value=0.9, terms=[HarmonicTerm(degree=2, order=0, amplitude=0.05)]),
        t_end=40.0,
        resolutions=[8, 12, 16],
    )


def _ricciflow_ellipsoid(param):
    ratio = _float_param(param, 1.2, "ricciflow-ellipsoid")
    return ScenarioConfig(
        name=f"ricciflow-ellipsoid-{ratio:g}",
        branch="ricci",
        theorem=THEOREM_RICCI,
        description=f"spheroid with axis ratio {ratio:g} under the modified Ricci flow",
        ricci=RicciSpec(initial="ellipsoid", axis_ratio=ratio),
        lapse=LapseSpec(kind="harmonics", value=0.9, terms=[HarmonicTerm(degree=2, order=0, amplitude=0.05)]),
        t_end=20.0,
        resolutions=[RICCI_NLAT],
        controls=EvolverControls(ds=RICCI_DS),
    )


def _ricciflow_ellipsoid_horizon(param):
    ratio = _float_param(param, 1.2, "ricciflow-ellipsoid-horizon")
    return ScenarioConfig(
        name=f"ricciflow-ellipsoid-horizon-{ratio:g}",
        branch="ricci",
        theorem=THEOREM_RICCI_HORIZON,
        description=f"spheroid with axis ratio {ratio:g}, horizon boundary",
        ricci=RicciSpec(initial="ellipsoid", axis_ratio=ratio),
        lapse=RICCI_HORIZON_LAPSE,
        t_end=20.0,
        resolutions=[RICCI_NLAT],
        controls=EvolverControls(ds=RICCI_DS),
    )


def _custom_from_file(param):
    if not param:
        raise ConfigError("custom-from-file needs a config path")
    return load_config(param)


def _fixed(value):
    return lambda param: value


PRESETS: Dict[str, Preset] = {
    preset.name: preset
    for preset in [
        Preset("flat", THEOREM_CONFORMAL, "Euclidean space as a stationary solution", _flat, _fixed("m = 0")),
        Preset("schwarzschild-family", THEOREM_CONFORMAL, "constant lapse c on round leaves",
               _schwarzschild_family, _schwarzschild_family_mass, parameter="c (default 0.8)"),
        Preset("schwarzschild-horizon", THEOREM_SCHWARZSCHILD, "Schwarzschild horizon by epsilon limit",
               _schwarzschild_horizon, _fixed("m = 0.5")),
        Preset("conformal-perturbation", THEOREM_CONFORMAL, "decaying conformal factor on the leaves",
               _conformal_perturbation, _fixed(None), parameter="p (default 2)"),
        Preset("ricciflow-ellipsoid", THEOREM_RICCI, "lapse on a Ricci flow background",
               _ricciflow_ellipsoid, _fixed(None), parameter="axis ratio (default 1.2)"),
        Preset("ricciflow-ellipsoid-horizon", THEOREM_RICCI_HORIZON, "Ricci flow background with horizon",
               _ricciflow_ellipsoid_horizon, _fixed("m >= 0.5"), parameter="axis ratio (default 1.2)"),
        Preset("custom-from-file", "as declared in the file", "any JSON scenario config",
               _custom_from_file, _fixed(None), parameter="path"),
    ]
}


def parse_preset(spec: str) -> Tuple[Preset, Optional[str]]:
    """'NAME', 'NAME PARAM' or 'NAME:PARAM'."""
    spec = spec.strip()
    for separator in (":", " "):
        if separator in spec:
            name, param = spec.split(separator, 1)
            name, param = name.strip(), param.strip() or None
            break
    else:
        name, param = spec, None
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; try list-presets")
    return PRESETS[name], param


def resolve_preset(spec: str) -> ScenarioConfig:
    preset, param = parse_preset(spec)
    return preset.build(param)


def list_presets() -> List[Dict]:
    return [preset.to_dict() for preset in PRESETS.values()]


# ----------------------------------------------------------------------
# Building inputs from a config
# ----------------------------------------------------------------------

def build_foliation(spec: FoliationSpec, grid: SphereGrid) -> ConformalFoliation:
    if spec.kind == "round":
        return RoundFoliation(grid)
    if spec.kind == "constant":
        return ConstantFoliation(grid, spec.value)
    if spec.kind == "power":
        return PowerFoliation(grid, spec.amplitude, spec.exponent, spec.degree, spec.order)
    if spec.kind == "log":
        return LogFoliation(grid, spec.amplitude, spec.degree, spec.order)
    return TabulatedFoliation.from_directory(spec.path, grid)


def build_curvature(spec: CurvatureSpec, grid: SphereGrid) -> PrescribedCurvature:
    if spec.kind == "zero":
        return ZeroCurvature(grid)
    if spec.kind == "power":
        return PowerCurvature(grid, spec.amplitude, spec.exponent, offset=spec.offset,
                              offset_exponent=spec.offset_exponent)
    if spec.kind == "power-y":
        return PowerCurvature(grid, spec.amplitude, spec.exponent, kappa=spec.kappa, offset=spec.offset,
                              offset_exponent=spec.offset_exponent, label="power-y")
    return TabulatedCurvature.from_directory(spec.path, grid)


def build_trajectory(spec: RicciSpec, nlat: int, t_end: float):
    axi = AxiGrid(nlat)
    if spec.initial == "round":
        g1 = round_metric(axi)
    elif spec.initial == "ellipsoid":
        g1 = ellipsoid_metric(axi, spec.axis_ratio)
    else:
        source = import_trajectory(spec.path)
        if source.grid.nlat != nlat:
            raise ConfigError(f"stored metric has nlat={source.grid.nlat}, run uses {nlat}")
        g1 = source.metric(0)
    return run_flow(g1, t_end, spec.safety, label=f"{spec.initial}-{nlat}")


def build_branch(cfg: ScenarioConfig, grid: SphereGrid):
    rbar = build_curvature(cfg.curvature, grid)
    if cfg.branch == "conformal":
        return ConformalBranch(build_foliation(cfg.foliation, grid), rbar)
    return RicciBranch(build_trajectory(cfg.ricci, grid.nlat, cfg.t_end), rbar)


def build_lapse(spec: LapseSpec, grid: SphereGrid, seed: int) -> Field:
    """Initial lapse phi on the grid; harmonic shapes are scaled to unit sup norm."""
    if spec.kind == "file":
        phi = read_field(spec.path, grid)
    else:
        shape = np.zeros(grid.shape)
        for term in spec.terms:
            y = grid.ylm_real(term.degree, term.order)
            shape = shape + term.amplitude * y / np.max(np.abs(y))
        if spec.random_amplitude > 0.0:
            rng = np.random.default_rng(seed)
            noise = np.zeros(grid.shape)
            for degree in range(1, 4):
                for order in range(degree + 1):
                    noise = noise + rng.standard_normal() * grid.ylm_real(degree, order)
            shape = shape + spec.random_amplitude * noise / np.max(np.abs(noise))
        phi = Field(grid, spec.value * (1.0 + shape))
    if not phi.min() > 0.0:
        raise ConfigError(f"initial lapse must be positive (min {phi.min():.6g})")
    return phi


# ----------------------------------------------------------------------
# Pipeline
# ----------------------------------------------------------------------

class LevelResult:
    """One rung of the resolution ladder."""

    def __init__(self, nlat: int, ds: float, record: SolutionRecord, reports: Dict,
                 horizon: Optional[HorizonRun] = None, envelope_trace=None, admissibility=None):
        self.nlat = nlat
        self.ds = ds
        self.record = record
        self.reports = reports
        self.horizon = horizon
        self.envelope_trace = envelope_trace
        self.admissibility = admissibility


class RunResult:
    def __init__(self, exit_code: int, directory: Optional[Path], failures: List[str], message: str = ""):
        self.exit_code = exit_code
        self.directory = directory
        self.failures = failures
        self.message = message


def _hypotheses(cfg: ScenarioConfig, branch) -> Optional[Dict]:
    if cfg.branch != "conformal":
        return None
    report = hypothesis_report(branch.fol, branch.rbar, max(cfg.t_end, 4.0))
    if report.condition("parabolicity").verdict == "fail":
        raise HypothesisError("parabolicity 1 + t df/dt > 0", None, report.condition("parabolicity").value)
    for item in report.conditions:
        if item.verdict != "pass":
            logger.warning("Hypothesis %s: %s", item.name, item.verdict)
    return report.model_dump()


def _admissibility(cfg: ScenarioConfig, branch):
    if cfg.branch == "conformal":
        return constant_K_conformal(branch.fol, branch.rbar, cfg.t_end)
    return constant_K_ricci(branch.traj, branch.rbar, cfg.t_end)


def _envelopes(cfg: ScenarioConfig, branch, times):
    if cfg.branch == "conformal":
        return envelopes_conformal(branch.fol, branch.rbar, times)
    return envelopes_ricci(branch.traj, branch.rbar, times)


def run_level(cfg: ScenarioConfig, nlat: int, ds: float, threads: int = 1) -> LevelResult:
    grid = SphereGrid(nlat, cfg.nlon_factor * nlat)
    branch = build_branch(cfg, grid)
    controls = cfg.controls.model_copy(update={"ds": ds})
    reports: Dict = {"nlat": nlat, "ds": ds}
    reports["hypotheses"] = _hypotheses(cfg, branch)
    provenance = {"scenario": cfg.name, "seed": cfg.seed, "nlat": nlat}

    if cfg.is_horizon:
        run = horizon_evolve(branch, cfg.t_end, controls, cfg.lapse.eps_ladder, cfg.lapse.eta,
                             threads=threads, provenance=provenance)
        record = run.record
        checks = [envelope_check(level, run.envelopes) for level in run.levels]
        reports["envelopes"] = {"levels": [check.to_dict() for check in checks],
                                "passed": all(check.passed for check in checks)}
        reports["horizon"] = run.to_dict()
        envelope_trace, admissibility = run.envelopes, None
    else:
        admissibility = _admissibility(cfg, branch)
        reports["admissibility"] = admissibility.to_dict()
        if admissibility.value <= 0.0:
            reports["admissibility"]["interpretation"] = "K = 0: no upper bound on the initial lapse"
        phi = build_lapse(cfg.lapse, grid, cfg.seed)
        if phi.min() < 1.0:
            logger.warning("Initial lapse below 1 (min %.4g): negative mass aspect", phi.min())
        record = evolve(branch, phi, cfg.t_end, controls, admissibility, provenance=provenance)
        run = None
        envelope_trace = _envelopes(cfg, branch, record.times)
        check = envelope_check(record, envelope_trace)
        reports["envelopes"] = check.to_dict()

    reports.update(audit_reports(record))
    if cfg.branch == "ricci":
        reports["ricci_flow"] = branch.traj.summary()
    return LevelResult(nlat, ds, record, reports, run, envelope_trace, admissibility)


def audit_reports(record: SolutionRecord) -> Dict:
    """Curvature, mass and flatness audits of one record."""
    reports: Dict = {}
    curvature = reconstruct_Rbar(record)
    reports["curvature"] = curvature
    if record.times[-1] >= ADM_MIN_T_END:
        mass = adm_mass(record)
        mass_lower_bound_check(record, mass)
        reports["mass"] = mass
        reports["flatness"] = flatness_report(record)
    else:
        logger.warning("t_end=%.4g below %.4g: mass and flatness fits skipped", record.times[-1], ADM_MIN_T_END)
    return reports


def _failures(top: LevelResult) -> List[str]:
    failures = []
    envelopes = top.reports.get("envelopes")
    if envelopes is not None and not envelopes["passed"]:
        failures.append("envelope containment")
    if top.reports["curvature"].max_error > ORACLE_TOL:
        failures.append("oracle closure")
    mass = top.reports.get("mass")
    if mass is not None and mass.lower_bound is not None and mass.lower_bound["verdict"] == "fail":
        failures.append("mass lower bound")
    return failures


def _serializable(reports: Dict) -> Dict:
    out = {}
    for key, value in reports.items():
        out[key] = value.to_dict() if hasattr(value, "to_dict") else value
    return out


def _write_outputs(store: RecordStore, cfg: ScenarioConfig, levels: List[LevelResult], orders,
                   failures: List[str], threads: int) -> None:
    top = levels[-1]
    record = top.record
    mass = top.reports.get("mass")
    store.save(record, manifest_extra={
        "scenario": cfg.name,
        "theorem": cfg.theorem,
        "seed": cfg.seed,
        "threads": threads,
        "config": cfg.model_dump(mode="json"),
        "audits": {"failures": failures, "passed": not failures},
    }, hawking=mass.hawking if mass is not None else None)
    for key, value in _serializable(top.reports).items():
        if value is not None and key not in ("nlat", "ds"):
            store.write_report(key, value if isinstance(value, dict) else {"value": value})
    store.write_report_csv("curvature", ["t", "error_inf", "error_l2"], top.reports["curvature"].rows())
    if mass is not None:
        store.write_report_csv("mass", MASS_COLUMNS, mass.rows())
        store.write_report_csv("flatness", ["t"] + FLATNESS_NORMS, top.reports["flatness"].rows())
    if top.envelope_trace is not None:
        envelope_trace_csv(top.envelope_trace, store.root / "reports" / "envelopes.csv")
    if top.admissibility is not None:
        admissibility_json(top.admissibility, store.root / "reports" / "admissibility.json")
    store.write_report("ladder", {
        "levels": [{"nlat": level.nlat, "ds": level.ds,
                    "oracle_error": level.reports["curvature"].max_error} for level in levels],
        "observed_orders": orders,
    })


def run_scenario(cfg: ScenarioConfig, threads: int = 1, out_dir=None) -> RunResult:
    """
    Run every rung of the resolution ladder and write the top rung.

    Rung k of n uses nlat = resolutions[k] and ds = controls.ds * 2^(n-1-k).
    Returns exit status 0 on success, the error's status otherwise.
    """
    directory = Path(out_dir or cfg.out_dir or DEFAULT_OUT_DIR / cfg.name)
    store = RecordStore(directory)
    count = len(cfg.resolutions)
    rungs = [(nlat, cfg.controls.ds * 2.0 ** (count - 1 - k)) for k, nlat in enumerate(cfg.resolutions)]
    logger.info("Running scenario %s (%s) on %d rung(s)", cfg.name, cfg.branch, count)
    try:
        inner = 1 if count > 1 else threads
        with ThreadPoolExecutor(max_workers=max(1, min(threads, count))) as executor:
            levels = list(executor.map(lambda rung: run_level(cfg, rung[0], rung[1], inner), rungs))
        orders = attach_orders([level.reports["curvature"] for level in levels])
        failures = _failures(levels[-1])
        _write_outputs(store, cfg, levels, orders, failures, threads)
        if failures:
            raise AuditFailure(failures)
    except QsphereError as e:
        logger.error("Scenario %s failed: %s", cfg.name, e)
        return RunResult(e.exit_code, directory, getattr(e, "failures", []), str(e))
    logger.info("Scenario %s passed; outputs in %s", cfg.name, directory)
    return RunResult(0, directory, [])


def audit_record(directory) -> RunResult:
    """Reload a stored run, rebuild its branch from the stored config and re-run the audits."""
    store = RecordStore(directory)
    try:
        manifest = store.manifest()
        if "config" not in manifest:
            raise ConfigError(f"{directory} has no stored config")
        cfg = ScenarioConfig.model_validate(manifest["config"])
        record = store.load()
        branch = build_branch(cfg, record.grid)
        record = record.with_branch(branch)
        reports = audit_reports(record)
        if not cfg.is_horizon:
            check = envelope_check(record, _envelopes(cfg, branch, record.times))
            reports["envelopes"] = check.to_dict()
        top = LevelResult(record.grid.nlat, cfg.controls.ds, record, reports)
        failures = _failures(top)
        for key, value in _serializable(reports).items():
            store.write_report(key, value)
        if failures:
            raise AuditFailure(failures)
    except (OSError, KeyError, ValueError) as e:
        logger.error("Cannot audit %s: %s", directory, e)
        return RunResult(ConfigError.exit_code, Path(directory), [], str(e))
    except QsphereError as e:
        logger.error("Audit of %s failed: %s", directory, e)
        return RunResult(e.exit_code, Path(directory), getattr(e, "failures", []), str(e))
    logger.info("Audit of %s passed", directory)
    return RunResult(0, Path(directory), [])


def expected_value(spec: str) -> Optional[str]:
    preset, param = parse_preset(spec)
    return preset.expected(param)
