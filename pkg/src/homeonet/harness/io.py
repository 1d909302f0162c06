"""CSV reading and writing for metrics and aggregates.

Floats are written with ``%.9g`` and rows in a fixed order so repeated runs
with the same config and seed give byte-identical files.
"""
from __future__ import annotations

import csv
import math
from dataclasses import fields
from pathlib import Path

from homeonet.harness.runner import AggregateRow, MetricsRow

METRICS_COLUMNS = [f.name for f in fields(MetricsRow)]
AGGREGATE_COLUMNS = [f.name for f in fields(AggregateRow)]


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.9g}"
    return str(value)


def _write(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in columns])
    return path


def write_metrics_csv(rows, path) -> Path:
    return _write(path, METRICS_COLUMNS, rows)


def write_aggregate_csv(rows, path) -> Path:
    return _write(path, AGGREGATE_COLUMNS, rows)


def _read(path, cls):
    types = {f.name: f.type for f in fields(cls)}
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(types) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            kw = {}
            for name, kind in types.items():
                raw = rec[name]
                kw[name] = int(raw) if kind == "int" else float(raw) if kind == "float" else raw
            out.append(cls(**kw))
    return out


def read_metrics_csv(path) -> list:
    return _read(path, MetricsRow)


def read_aggregate_csv(path) -> list:
    return _read(path, AggregateRow)
