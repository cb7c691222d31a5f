"""Deterministic CSV and JSON writers for run artifacts."""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .core import AmplitudeState, FieldState

FIELD_COLUMNS = ("z", "tau", "omega_p", "omega_s", "phi_p", "phi_s", "pop1", "pop2", "pop3")
FLOAT_FMT = "%.17g"


def fmt(x) -> str:
    """17 significant digits; empty cell for missing values."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT % x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    return str(x)


def _banner(kind: str, extra: dict | None = None) -> str:
    items = [f"tristate-prop {__version__}", kind]
    items += [f"{k}={fmt(v)}" for k, v in (extra or {}).items()]
    return "# " + " ".join(items) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_fields_csv(path, fields: FieldState, amps: AmplitudeState, meta: dict | None = None) -> Path:
    """One row per ``(z, tau)`` cell, z-major."""
    nz, nt = fields.omega_p.shape
    pops = amps.populations
    cols = [
        np.repeat(np.atleast_1d(fields.z).astype(float), nt),
        np.tile(fields.tau, nz),
        fields.omega_p.ravel(), fields.omega_s.ravel(),
        fields.phi_p.ravel(), fields.phi_s.ravel(),
        *(np.broadcast_to(p, (nz, nt)).ravel() for p in pops),
    ]
    lines = [_banner("fields", meta), ",".join(FIELD_COLUMNS) + "\n"]
    row_fmt = ",".join([FLOAT_FMT] * len(FIELD_COLUMNS)) + "\n"
    data = np.column_stack(cols)
    lines.extend(row_fmt % tuple(r) for r in data)
    _atomic_write(path, "".join(lines))
    return Path(path)


def write_table_csv(path, columns: list[str], rows: list[dict], meta: dict | None = None,
                    kind: str = "table") -> Path:
    lines = [_banner(kind, meta), ",".join(columns) + "\n"]
    for row in rows:
        lines.append(",".join(fmt(row.get(c)) for c in columns) + "\n")
    _atomic_write(path, "".join(lines))
    return Path(path)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _finite(obj):
    # JSON has no NaN; map non-finite floats to null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path, obj) -> Path:
    text = json.dumps(_finite(json.loads(json.dumps(obj, default=_json_default))), indent=2) + "\n"
    _atomic_write(path, text)
    return Path(path)


def read_table_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and string rows, skipping ``#`` banner lines."""
    with open(path) as fh:
        rows = [ln.rstrip("\n").split(",") for ln in fh if not ln.startswith("#")]
    return (rows[0], rows[1:]) if rows else ([], [])
