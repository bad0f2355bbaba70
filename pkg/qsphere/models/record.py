"""
Solution records and their on-disk layout
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core.errors import GridError, PositivityError
from ..core.sphere_ops import Field, SphereGrid
from ..utils.fitting import stencil_derivative
from ..utils.io import read_json, read_qsf, write_csv, write_json, write_qsf


logger = logging.getLogger(__name__)

BRANCHES = ("conformal", "ricci")


class SolutionRecord:
    """
    Lapse snapshots u(t_k, .) of one run.

    ``branch`` is the runtime branch object the record was produced with
    (needed by the geometry audits); it is not persisted.  ``u_dot`` holds
    du/dt per snapshot as the producer measured it: from the integrator's
    own steps around each snapshot, or through the horizon transformation.
    """

    def __init__(
        self,
        branch_kind: str,
        grid: SphereGrid,
        times: Sequence[float],
        u: np.ndarray,
        diagnostics: Optional[List[Dict]] = None,
        provenance: Optional[Dict] = None,
        branch=None,
        u_dot: Optional[np.ndarray] = None,
        scaled: bool = False,
    ):
        if branch_kind not in BRANCHES:
            raise ValueError(f"unknown branch {branch_kind!r}")
        times = np.asarray(times, dtype=float)
        u = np.asarray(u, dtype=float)
        if u.shape != (times.size,) + grid.shape:
            raise GridError(f"snapshots have shape {u.shape}, expected {(times.size,) + grid.shape}")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("snapshot times must be strictly increasing")
        for k in range(times.size):
            low = float(np.min(u[k]))
            if not low > 0.0:
                raise PositivityError(float(times[k]), low)
        self.branch_kind = branch_kind
        self.grid = grid
        self.times = times
        self.u = u
        self.diagnostics = diagnostics or []
        self.provenance = provenance or {}
        self.branch = branch
        self.u_dot = u_dot
        self.scaled = scaled

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def w(self) -> np.ndarray:
        return self.u ** -2

    @property
    def m(self) -> np.ndarray:
        return 0.5 * self.times[:, None, None] * (1.0 - self.w)

    def field(self, k: int) -> Field:
        return Field(self.grid, self.u[k], check=False)

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return k

    def time_derivative(self) -> np.ndarray:
        """du/dt per snapshot: stored values, else finite differences in ln t."""
        if self.u_dot is not None:
            return self.u_dot
        du_ds = stencil_derivative(np.log(self.times), self.u)
        return du_ds / self.times[:, None, None]

    def mean_mass(self) -> np.ndarray:
        """(1/4 pi) of the integral of m over the round sphere, per snapshot."""
        weights = self.grid.weights
        return np.array([np.sum(weights * m) for m in self.m]) / (4.0 * math.pi)

    def w_extrema(self):
        flat = self.w.reshape(len(self), -1)
        return flat.min(axis=1), flat.max(axis=1)

    def with_branch(self, branch) -> "SolutionRecord":
        return SolutionRecord(self.branch_kind, self.grid, self.times, self.u, self.diagnostics,
                              self.provenance, branch, self.u_dot, self.scaled)


class RecordStore:
    """Reads and writes run directories (manifest, snapshots, summary, reports)."""

    def __init__(self, root):
        self.root = Path(root)

    def save(self, record: SolutionRecord, manifest_extra: Optional[Dict] = None,
             hawking: Optional[Sequence[float]] = None) -> Path:
        snapshots = self.root / "snapshots"
        files = []
        for k in range(len(record)):
            name = f"u_{k:05d}.qsf"
            write_qsf(snapshots / name, record.u[k])
            files.append(name)
        udot_files = None
        if record.u_dot is not None:
            udot_files = []
            for k in range(len(record)):
                name = f"udot_{k:05d}.qsf"
                write_qsf(snapshots / name, record.u_dot[k])
                udot_files.append(name)
        manifest = {
            "branch": record.branch_kind,
            "nlat": record.grid.nlat,
            "nlon": record.grid.nlon,
            "times": record.times.tolist(),
            "snapshots": files,
            "u_dot": udot_files,
            "scaled": record.scaled,
            "diagnostics": record.diagnostics,
            "provenance": record.provenance,
        }
        manifest.update(manifest_extra or {})
        write_json(self.root / "manifest.json", manifest)
        self.write_summary(record, hawking)
        logger.info("Saved %d snapshots to %s", len(record), self.root)
        return self.root

    def write_summary(self, record: SolutionRecord, hawking: Optional[Sequence[float]] = None) -> None:
        w_min, w_max = record.w_extrema()
        mean_m = record.mean_mass()
        if hawking is None:
            hawking = mean_m
        rows = zip(record.times, w_min, w_max, mean_m, hawking)
        write_csv(self.root / "summary.csv", ["t", "min_w", "max_w", "mean_m", "hawking_mass"], rows)

    def load(self) -> SolutionRecord:
        manifest = read_json(self.root / "manifest.json")
        grid = SphereGrid(manifest["nlat"], manifest["nlon"])
        snapshots = self.root / "snapshots"
        u = np.stack([read_qsf(snapshots / name) for name in manifest["snapshots"]])
        u_dot = None
        if manifest.get("u_dot"):
            u_dot = np.stack([read_qsf(snapshots / name) for name in manifest["u_dot"]])
        return SolutionRecord(
            manifest["branch"],
            grid,
            manifest["times"],
            u,
            diagnostics=manifest.get("diagnostics"),
            provenance=manifest.get("provenance"),
            u_dot=u_dot,
            scaled=manifest.get("scaled", False),
        )

    def manifest(self) -> Dict:
        return read_json(self.root / "manifest.json")

    def write_report(self, name: str, payload: Dict) -> Path:
        path = self.root / "reports" / f"{name}.json"
        write_json(path, payload)
        return path

    def write_report_csv(self, name: str, columns: Sequence[str], rows) -> Path:
        path = self.root / "reports" / f"{name}.csv"
        write_csv(path, columns, rows)
        return path
