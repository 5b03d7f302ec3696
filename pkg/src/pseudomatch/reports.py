"""Deterministic CSV/JSON writers for experiment outputs.

Floats are written with ``repr`` precision, keys are sorted and no
timestamps or absolute paths are recorded, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .fixpoint import GridFunction


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_json(path: Path, data) -> None:
    text = json.dumps(_clean(data), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_grid_function(path: Path, F: GridFunction, metadata: dict | None = None) -> None:
    """``z,value`` CSV plus a sidecar ``.json`` with the parameters and any metadata."""
    path = Path(path)
    write_csv(path, ["z", "value"], zip(F.grid.tolist(), F.values.tolist()))
    meta = {"q": F.params.q, "lambda": F.params.lam, "N": F.n}
    meta.update(metadata or {})
    write_json(path.with_suffix(".json"), meta)


def read_grid_function(path: Path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


NORM_SWEEP_HEADER = ["q", "lambda", "N", "norm", "sup_I_A", "sup_I_B", "I_A_at_right", "I_B_at_right"]
MC_HEADER = ["q", "n", "samples", "mean_scaled_cost", "std_err", "seed"]
