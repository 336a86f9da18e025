"""JSON and CSV encodings for matrices, vectors and trajectories."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from typing import Any

import numpy as np

from .cone import as_symmetric
from .errors import DimensionError


def matrix_to_json(x) -> dict:
    """Encode a matrix as ``{"dim": n, "rows": [...]}`` (``dim`` only when square)."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    out = {"rows": [[float(v) for v in row] for row in a]}
    if a.shape[0] == a.shape[1]:
        out = {"dim": int(a.shape[0]), **out}
    return out


def _rows(obj) -> np.ndarray:
    if isinstance(obj, dict):
        rows = obj.get("rows")
        if rows is None:
            raise ValueError("matrix object needs a 'rows' field")
    else:
        rows = obj
    a = np.array(rows, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1) if a.size else a.reshape(0, 0)
    if a.ndim != 2:
        raise DimensionError("matrix rows must form a 2-d array")
    if isinstance(obj, dict) and "dim" in obj:
        n = int(obj["dim"])
        if a.shape != (n, n):
            raise DimensionError(f"declared dim {n} does not match rows of shape {a.shape}")
    return a


def matrix_from_json(obj) -> np.ndarray:
    """Decode a general (possibly rectangular) matrix."""
    return _rows(obj)


def sym_from_json(obj) -> np.ndarray:
    """Decode a symmetric matrix, enforcing the symmetry tolerance."""
    return as_symmetric(_rows(obj))


def vector_from_json(obj) -> np.ndarray:
    v = np.array(obj, dtype=float)
    if v.ndim != 1:
        raise DimensionError("expected a flat list of numbers")
    return v


def to_jsonable(value: Any) -> Any:
    """Recursively convert numpy containers and non-finite floats for JSON output."""
    if isinstance(value, np.ndarray):
        if value.ndim == 2:
            return matrix_to_json(value)
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        f = float(value)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def dumps(payload: Any) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2) + "\n"


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def upper_triangle_header(n: int) -> list:
    return ["t"] + [f"p{i + 1}{j + 1}" if n < 10 else f"p{i + 1}_{j + 1}"
                    for i in range(n) for j in range(i, n)]


def trajectory_to_csv(trajectory) -> str:
    """CSV text with header ``t`` followed by the ``n(n+1)/2`` upper-triangle entries."""
    n = trajectory.dim
    iu = np.triu_indices(n)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(upper_triangle_header(n))
    for t, p in zip(trajectory.times, trajectory.states):
        writer.writerow([repr(float(t))] + [repr(float(v)) for v in p[iu]])
    return buf.getvalue()


def trajectory_from_csv(text: str):
    """Inverse of :func:`trajectory_to_csv`; returns ``(times, states)``."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    m = len(header) - 1
    n = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    if n * (n + 1) // 2 != m:
        raise DimensionError("CSV column count is not triangular")
    iu = np.triu_indices(n)
    times, states = [], []
    for row in reader:
        vals = np.array([float(v) for v in row])
        p = np.zeros((n, n))
        p[iu] = vals[1:]
        p = p + np.triu(p, 1).T
        times.append(vals[0])
        states.append(p)
    return np.array(times), states


def trajectory_to_json(trajectory) -> dict:
    return {
        "times": [float(t) for t in trajectory.times],
        "states": [matrix_to_json(p) for p in trajectory.states],
        "exitTime": trajectory.exit_time,
        "exitReason": trajectory.exit_reason.value,
    }
