"""CSV / JSONL writers for run outputs.  Every CSV row carries a
``schema_version`` column so downstream readers can detect layout changes."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

SCHEMA_VERSION = 1


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def write_csv(path: str | Path, rows: Iterable[dict], columns: list[str] | None = None) -> Path:
    rows = list(rows)
    path = Path(path)
    if columns is None:
        columns = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["schema_version", *columns])
        writer.writeheader()
        for r in rows:
            writer.writerow({"schema_version": SCHEMA_VERSION,
                             **{k: _clean(r.get(k, "")) for k in columns}})
    return path


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_jsonl(path: str | Path, records: Iterable[dict]) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, allow_nan=True, separators=(",", ":")))
            fh.write("\n")
    return path


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2))
    return path
