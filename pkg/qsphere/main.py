"""
qsphere - quasi-spherical metrics of prescribed scalar curvature
Command-line entry point
"""

import argparse
import json
import sys
from typing import List, Optional

from qsphere.config.settings import DEBUG, DEFAULT_THREADS
from qsphere.core.errors import ConfigError, QsphereError
from qsphere.core.scenario_runner import audit_record, list_presets, parse_preset, run_scenario
from qsphere.models.scenario import load_config
from qsphere.utils.logger import configure_logging, log_debug, log_error, log_info, log_warning


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsphere",
                                     description="Construct and audit quasi-spherical metrics of prescribed scalar curvature.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="JSON scenario file")
    source.add_argument("--preset", help="preset name, optionally 'NAME PARAM' or 'NAME:PARAM'")
    run.add_argument("--resolution", type=int, help="single nlat instead of the configured ladder")
    run.add_argument("--tmax", type=float, help="override t_end")
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int, help="random seed for lapse perturbations")
    run.add_argument("--threads", type=int, default=DEFAULT_THREADS, help="worker threads")
    run.add_argument("--dry-run", action="store_true", help="validate and print the resolved config")

    sub.add_parser("list-presets", help="print the preset catalog")

    audit = sub.add_parser("audit", help="re-run the audits on a stored record")
    audit.add_argument("--record", required=True, help="run directory")
    return parser


def _resolve(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        preset, param = parse_preset(args.preset)
        cfg = preset.build(param)
    updates = {}
    if args.resolution is not None:
        updates["resolutions"] = [args.resolution]
    if args.tmax is not None:
        updates["t_end"] = args.tmax
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = args.out
    if updates:
        try:
            cfg = type(cfg).model_validate({**cfg.model_dump(), **updates})
        except ValueError as e:
            raise ConfigError(f"invalid override: {e}")
    return cfg


def _run(args) -> int:
    cfg = _resolve(args)
    if args.dry_run:
        print(json.dumps(cfg.model_dump(mode="json"), indent=2))
        return 0
    if args.threads < 1:
        log_warning(f"--threads {args.threads} is not positive; using 1")
    log_info(f"Running {cfg.name} ({cfg.theorem or 'no theorem label'})")
    log_debug(f"Resolutions {cfg.resolutions}, t_end {cfg.t_end:g}, ds {cfg.controls.ds:g}")
    result = run_scenario(cfg, threads=max(1, args.threads))
    if result.exit_code == 0:
        log_info(f"Outputs written to {result.directory}")
    else:
        log_error(f"{cfg.name}: {result.message}")
    return result.exit_code


def _list() -> int:
    for entry in list_presets():
        name = entry["name"] + (f" [{entry['parameter']}]" if entry["parameter"] else "")
        print(f"{name}")
        print(f"    theorem:     {entry['theorem']}")
        print(f"    description: {entry['description']}")
        if entry["expected"] is not None:
            print(f"    expected:    {entry['expected']}")
    return 0


def _audit(args) -> int:
    result = audit_record(args.record)
    if result.exit_code == 0:
        log_info(f"Audit passed: {result.directory}")
    else:
        log_error(f"Audit failed: {result.message}")
    return result.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    configure_logging()
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "list-presets":
            return _list()
        return _audit(args)
    except QsphereError as e:
        if DEBUG:
            raise
        log_error(str(e))
        return e.exit_code
    except KeyboardInterrupt:
        print("\nInterrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
