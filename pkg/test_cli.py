#!/usr/bin/env python3
"""
Tests for the qsphere command line, the preset catalog and a small
end-to-end scenario run.
"""

import io
import json
import os
import subprocess
import sys
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path

sys.path.insert(0, os.path.dirname(__file__))

from pydantic import ValidationError

from qsphere.config.settings import ORACLE_TOL, RICCI_DS, RICCI_HORIZON_ETA, RICCI_NLAT
from qsphere.core.errors import ConfigError
from qsphere.core.scenario_runner import (
    _failures,
    audit_record,
    expected_value,
    list_presets,
    parse_preset,
    resolve_preset,
    run_level,
    run_scenario,
)
from qsphere.main import main
from qsphere.models.scenario import EvolverControls, LapseSpec, ScenarioConfig, load_config

REPO = os.path.dirname(os.path.abspath(__file__))


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "qsphere", *args], cwd=REPO,
                          capture_output=True, text=True, timeout=120)


class CommandLineTests(unittest.TestCase):
    def test_list_presets(self):
        proc = _cli("list-presets")
        self.assertEqual(proc.returncode, 0, proc.stderr)
        self.assertIn("schwarzschild-family", proc.stdout)
        self.assertIn("m = 0.5", proc.stdout)

    def test_dry_run_prints_resolved_config(self):
        proc = _cli("run", "--preset", "schwarzschild-family 0.5", "--dry-run", "--tmax", "25")
        self.assertEqual(proc.returncode, 0, proc.stderr)
        payload = json.loads(proc.stdout)
        self.assertEqual(payload["lapse"]["value"], 0.5)
        self.assertEqual(payload["t_end"], 25.0)

    def test_unknown_preset_exits_with_config_status(self):
        proc = _cli("run", "--preset", "no-such-preset", "--dry-run")
        self.assertEqual(proc.returncode, 2)

    def test_bad_config_file_exits_with_config_status(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "bad.json")
            Path(path).write_text("{not json", encoding="utf-8")
            self.assertEqual(main(["run", "--config", path, "--dry-run"]), 2)

    def test_invalid_override_is_a_config_error(self):
        with redirect_stdout(io.StringIO()):
            self.assertEqual(main(["run", "--preset", "flat", "--resolution", "4", "--dry-run"]), 2)

    def test_in_process_list(self):
        out = io.StringIO()
        with redirect_stdout(out):
            self.assertEqual(main(["list-presets"]), 0)
        self.assertIn("ricciflow-ellipsoid-horizon", out.getvalue())


class PresetTests(unittest.TestCase):
    def test_parse_preset_separators(self):
        preset, param = parse_preset("schwarzschild-family:0.7")
        self.assertEqual(preset.name, "schwarzschild-family")
        self.assertEqual(param, "0.7")
        preset, param = parse_preset("flat")
        self.assertIsNone(param)
        with self.assertRaises(ConfigError):
            parse_preset("nothing")

    def test_expected_values(self):
        self.assertEqual(expected_value("schwarzschild-family 0.8"), "m = -0.28125")
        self.assertEqual(expected_value("schwarzschild-horizon"), "m = 0.5")
        self.assertEqual(expected_value("flat"), "m = 0")

    def test_preset_configs(self):
        cfg = resolve_preset("schwarzschild-family 1.25")
        self.assertEqual(cfg.lapse.value, 1.25)
        self.assertTrue(resolve_preset("schwarzschild-horizon").is_horizon)
        self.assertEqual(resolve_preset("ricciflow-ellipsoid").branch, "ricci")
        with self.assertRaises(ConfigError):
            resolve_preset("schwarzschild-family abc")
        names = [entry["name"] for entry in list_presets()]
        self.assertIn("custom-from-file", names)

    def test_ricci_presets_run_at_the_resolved_grid(self):
        for name in ("ricciflow-ellipsoid", "ricciflow-ellipsoid-horizon"):
            cfg = resolve_preset(name)
            self.assertEqual(cfg.resolutions, [RICCI_NLAT])
            self.assertEqual(cfg.controls.ds, RICCI_DS)
        self.assertEqual(resolve_preset("ricciflow-ellipsoid-horizon").lapse.eta, RICCI_HORIZON_ETA)

    def test_horizon_ladder_must_be_geometric(self):
        with self.assertRaises(ValidationError):
            LapseSpec(kind="horizon", eps_ladder=[0.04, 0.02, 0.005])
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "cfg.json")
            Path(path).write_text(json.dumps({"name": "x", "lapse": {"kind": "horizon",
                                                                    "eps_ladder": [0.04, 0.02, 0.005]}}),
                                  encoding="utf-8")
            with self.assertRaises(ConfigError):
                load_config(path)

    def test_load_config_reports_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "cfg.json")
            Path(path).write_text(json.dumps({"name": "x", "resolutions": [4]}), encoding="utf-8")
            with self.assertRaises(ConfigError):
                load_config(path)
            with self.assertRaises(ConfigError):
                load_config(os.path.join(tmp, "missing.json"))
            Path(path).write_text(json.dumps({"name": "x", "t_end": 30}), encoding="utf-8")
            self.assertEqual(load_config(path).t_end, 30.0)


class EndToEndTests(unittest.TestCase):
    def test_flat_run_and_audit(self):
        cfg = ScenarioConfig(name="flat-small", resolutions=[8], t_end=3.0,
                             controls=EvolverControls(ds=0.05, snapshot_every=1))
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "flat"
            result = run_scenario(cfg, threads=1, out_dir=out)
            self.assertEqual(result.exit_code, 0, result.message)
            for name in ("manifest.json", "summary.csv", "reports/curvature.csv",
                         "reports/envelopes.csv", "reports/admissibility.json", "reports/ladder.json"):
                self.assertTrue((out / name).exists(), name)
            self.assertFalse((out / "reports" / "mass.csv").exists())
            manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
            self.assertTrue(manifest["audits"]["passed"])
            self.assertEqual(manifest["config"]["name"], "flat-small")

            self.assertEqual(audit_record(out).exit_code, 0)
            self.assertEqual(audit_record(Path(tmp) / "missing").exit_code, 2)

    def test_summary_is_byte_identical_across_runs(self):
        cfg = ScenarioConfig(name="flat-small", resolutions=[8], t_end=3.0,
                             controls=EvolverControls(ds=0.05, snapshot_every=1))
        with tempfile.TemporaryDirectory() as tmp:
            first = run_scenario(cfg, threads=1, out_dir=Path(tmp) / "a")
            second = run_scenario(cfg, threads=2, out_dir=Path(tmp) / "b")
            self.assertEqual(first.exit_code, 0, first.message)
            self.assertEqual(second.exit_code, 0, second.message)
            self.assertEqual((Path(tmp) / "a" / "summary.csv").read_bytes(),
                             (Path(tmp) / "b" / "summary.csv").read_bytes())


class PresetClosureTests(unittest.TestCase):
    def test_schwarzschild_family_default_closes(self):
        cfg = resolve_preset("schwarzschild-family")
        level = run_level(cfg, 16, cfg.controls.ds)
        self.assertLessEqual(level.reports["curvature"].max_error, ORACLE_TOL)

    def test_ricci_ellipsoid_closes(self):
        cfg = resolve_preset("ricciflow-ellipsoid")
        level = run_level(cfg, cfg.resolutions[-1], cfg.controls.ds)
        self.assertLessEqual(level.reports["curvature"].max_error, ORACLE_TOL)
        self.assertTrue(level.reports["envelopes"]["passed"])
        self.assertEqual(_failures(level), [])


if __name__ == "__main__":
    unittest.main()
