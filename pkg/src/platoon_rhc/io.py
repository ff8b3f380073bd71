"""CSV and JSON writers for run outputs, plus the matching reader.

Floats are written with ``repr`` (shortest round-trip form), so a table
read back with :func:`read_table` compares equal to what was written and
two identical runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .sim import ESTIMATE_COLUMNS, STEP_COLUMNS, TRAJECTORY_COLUMNS, RunResult, SweepRow

SWEEP_COLUMNS = ("axis", "value", "seed", "formation_time", "mean_ms", "max_ms", "error")
AGGREGATE_COLUMNS = (
    "value", "cells", "formed", "failed", "mean_formation_time", "mean_compute_ms",
)

# column name -> parser; anything not listed stays a string
_INT_COLUMNS = {"step", "index", "n_platoon", "formed", "iterations", "active_slacks", "seed",
                "cells", "failed"}
_STR_COLUMNS = {"vid", "status", "axis", "error"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(float(value))  # plain repr, also for numpy float64
    if hasattr(value, "item"):  # numpy scalar
        return _fmt(value.item())
    return str(value)


def _parse(name: str, text: str):
    if name in _STR_COLUMNS:
        return text
    if text == "":
        return None
    if name in _INT_COLUMNS:
        return int(text)
    return float(text)


def write_table(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path: str | Path) -> list[dict]:
    """Read a table written by this module back into typed dictionaries."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return [{n: _parse(n, v) for n, v in zip(header, row)} for row in reader]


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if hasattr(obj, "item"):
        return _json_safe(obj.item())
    return obj


def run_meta(result: RunResult) -> dict:
    return _json_safe({
        "version": __version__,
        "seed": result.seed,
        "scenario": result.scenario.to_dict(),
        "ovm_params": {vid: asdict(p) for vid, p in result.ovm_params.items()},
        "feasibility": result.feasibility.to_dict() if result.feasibility else None,
        "metrics": result.metrics(),
        "collision": _collision_summary(result.collision),
        "columns": {
            "trajectory": list(TRAJECTORY_COLUMNS),
            "steps": list(STEP_COLUMNS),
            "estimates": list(ESTIMATE_COLUMNS),
        },
    })


def _collision_summary(collision: dict | None) -> dict | None:
    if collision is None:
        return None
    return {k: v for k, v in collision.items() if k != "result"}


def write_run(result: RunResult, out: str | Path) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectory": write_table(out / "trajectory.csv", TRAJECTORY_COLUMNS, result.trajectory),
        "estimates": write_table(out / "estimates.csv", ESTIMATE_COLUMNS, result.estimates),
        "steps": write_table(out / "steps.csv", STEP_COLUMNS, result.steps),
    }
    meta = out / "meta.json"
    meta.write_text(json.dumps(run_meta(result), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["meta"] = meta
    return paths


def write_sweep(rows: Sequence[SweepRow], summary: Sequence[dict], out: str | Path) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cells = [
        (r.axis, r.value, r.seed, r.formation_time, r.mean_ms, r.max_ms, r.error) for r in rows
    ]
    return {
        "sweep": write_table(out / "sweep.csv", SWEEP_COLUMNS, cells),
        "aggregate": write_table(
            out / "aggregate.csv",
            AGGREGATE_COLUMNS,
            [[a[c] for c in AGGREGATE_COLUMNS] for a in summary],
        ),
    }
