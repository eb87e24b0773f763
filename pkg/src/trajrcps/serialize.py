"""CSV / JSON readers and writers.  All writes go to a temp file and are renamed."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from .exceptions import RcpsError
from .lti import Trajectory


def fmt(value) -> str:
    """Lossless text form: 17 significant digits for floats, '' for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (list, tuple)):
        return ";".join(fmt(v) for v in value)
    return str(value)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, json_text(obj))


def write_records_csv(path, records: List[dict]) -> None:
    if not records:
        raise RcpsError("nothing to write")
    header = list(records[0])
    atomic_write_text(path, csv_text(header, ([r[k] for k in header] for r in records)))


# -- trajectories --------------------------------------------------------------

def trajectory_csv(traj: Trajectory) -> str:
    """First row carries T, d and seed; then one row of x components per state."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"T={traj.T}", f"d={traj.d}", f"seed={traj.seed}"])
    for row in traj.states:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_trajectory(path, traj: Trajectory) -> None:
    atomic_write_text(path, trajectory_csv(traj))


def read_trajectory(path) -> Trajectory:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RcpsError(f"{path}: empty trajectory file")
    meta = {}
    for cell in rows[0]:
        key, _, value = cell.partition("=")
        meta[key.strip()] = value.strip()
    try:
        T, d, seed = int(meta["T"]), int(meta["d"]), int(meta["seed"])
    except (KeyError, ValueError):
        raise RcpsError(f"{path}: header must read T=<int>,d=<int>,seed=<int>")
    states = np.array([[float(v) for v in row] for row in rows[1:]])
    if states.shape != (T + 1, d):
        raise RcpsError(f"{path}: expected {T + 1} rows of {d} values, got {states.shape}")
    return Trajectory(states, seed)


# -- residuals -----------------------------------------------------------------

def write_residuals(path, res) -> None:
    atomic_write_text(path, csv_text(["residual"], ([r] for r in np.asarray(res, float))))


def read_residuals(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["residual"]:
        raise RcpsError(f"{path}: expected a single-column CSV with header 'residual'")
    try:
        res = np.array([float(r[0]) for r in rows[1:] if r])
    except (ValueError, IndexError):
        raise RcpsError(f"{path}: non-numeric residual")
    if res.size == 0:
        raise RcpsError(f"{path}: no residuals")
    return res
