"""Report writers: UTF-8 CSV with a units header line, JSON summaries.

Files are written atomically (temp file in the same directory, then rename)
and formatted deterministically: floats use shortest round-trip repr, so a
re-run with identical inputs produces byte-identical artifacts.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def atomic_write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return path


def write_csv(path, columns, rows) -> Path:
    """columns: list of (name, unit); rows: iterables of cell values."""
    lines = [
        ",".join(name for name, _ in columns),
        ",".join(unit for _, unit in columns),
    ]
    for row in rows:
        cells = [fmt(v) for v in row]
        if len(cells) != len(columns):
            raise ValueError(f"{path}: row has {len(cells)} cells, expected {len(columns)}")
        lines.append(",".join(cells))
    return atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_json(path, payload: dict) -> Path:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    return atomic_write_text(Path(path), json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_csv(path):
    """Parse back a units-header CSV: (columns, units, rows of strings)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        raise ValueError(f"{path}: missing header rows")
    names = lines[0].split(",")
    units = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:]]
    return names, units, rows
