"""CSV/JSON writers shared by every output file.

Run metadata (config hash, seed) goes into leading CSV columns rather than a
comment line, so plain CSV readers see a normal header row.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], meta: Mapping | None = None) -> None:
    meta = dict(meta or {})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*meta.keys(), *header])
        prefix = [fmt(v) for v in meta.values()]
        for row in rows:
            w.writerow(prefix + [fmt(v) for v in row])


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if np.isfinite(value) else None
    return obj


def dumps(payload) -> str:
    return json.dumps(to_jsonable(payload), sort_keys=True)


def write_json(path, payload: Mapping) -> None:
    Path(path).write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
