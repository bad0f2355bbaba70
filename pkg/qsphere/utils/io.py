"""
File helpers: atomic writes, the QSF1/QSP1 binary field formats, CSV and JSON.

QSF1 layout: b"QSF1", nlat and nlon as little-endian uint32, then nlat*nlon
little-endian float64 values, latitude-major.  QSP1 is the 1-D profile
variant: b"QSP1", nlat as uint32, then nlat float64 values.
"""

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from ..config.settings import CSV_FLOAT_FORMAT


PathLike = Union[str, Path]

QSF_MAGIC = b"QSF1"
QSP_MAGIC = b"QSP1"


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    """Write to a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: PathLike, payload: Dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path: PathLike) -> Dict:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def encode_qsf(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("QSF1 fields must be two-dimensional (nlat, nlon)")
    nlat, nlon = values.shape
    header = QSF_MAGIC + struct.pack("<II", nlat, nlon)
    return header + np.ascontiguousarray(values).astype("<f8").tobytes()


def decode_qsf(payload: bytes) -> np.ndarray:
    if payload[:4] != QSF_MAGIC:
        raise ValueError("not a QSF1 field file")
    nlat, nlon = struct.unpack("<II", payload[4:12])
    data = np.frombuffer(payload, dtype="<f8", offset=12)
    if data.size != nlat * nlon:
        raise ValueError(f"QSF1 payload holds {data.size} values, header says {nlat}x{nlon}")
    return data.reshape(nlat, nlon).astype(np.float64)


def write_qsf(path: PathLike, values: np.ndarray) -> None:
    atomic_write_bytes(path, encode_qsf(values))


def read_qsf(path: PathLike) -> np.ndarray:
    return decode_qsf(Path(path).read_bytes())


def encode_qsp(profile: np.ndarray) -> bytes:
    profile = np.asarray(profile, dtype=np.float64).ravel()
    return QSP_MAGIC + struct.pack("<I", profile.size) + profile.astype("<f8").tobytes()


def decode_qsp(payload: bytes) -> np.ndarray:
    if payload[:4] != QSP_MAGIC:
        raise ValueError("not a QSP1 profile file")
    (nlat,) = struct.unpack("<I", payload[4:8])
    data = np.frombuffer(payload, dtype="<f8", offset=8)
    if data.size != nlat:
        raise ValueError(f"QSP1 payload holds {data.size} values, header says {nlat}")
    return data.astype(np.float64)


def write_qsp(path: PathLike, profile: np.ndarray) -> None:
    atomic_write_bytes(path, encode_qsp(profile))


def read_qsp(path: PathLike) -> np.ndarray:
    return decode_qsp(Path(path).read_bytes())


def format_float(value: float) -> str:
    return CSV_FLOAT_FORMAT % float(value)


def render_csv(columns: Sequence[str], rows: Iterable[Sequence[float]]) -> str:
    """CSV with every number rendered at 17 significant digits."""
    lines: List[str] = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_render_cell(cell) for cell in row))
    return "\n".join(lines) + "\n"


def _render_cell(cell) -> str:
    if cell is None:
        return ""
    if isinstance(cell, (bool, np.bool_)):
        return "1" if cell else "0"
    if isinstance(cell, (int, np.integer)):
        return str(int(cell))
    if isinstance(cell, (float, np.floating)):
        return format_float(cell)
    return str(cell)


def write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Sequence[float]]) -> None:
    atomic_write_text(path, render_csv(columns, rows))


def read_csv(path: PathLike) -> Tuple[List[str], np.ndarray]:
    with open(path, "r", encoding="utf-8") as handle:
        columns = handle.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return columns, data
