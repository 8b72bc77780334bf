"""
io.py — Result file writers

All writers go through a temp file + rename so a crashed run never leaves a
half-written metrics file behind. JSON output is strict: non-finite floats
are written as the strings "Infinity" / "-Infinity" (the config convention)
and NaN as null.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

from ..sim.engine import CSV_FIELDS, TRACE_FIELDS


def json_safe(value: Any) -> Any:
    """Copy of `value` with every non-finite float replaced."""
    if isinstance(value, float) and not math.isfinite(value):
        if math.isnan(value):
            return None
        return "Infinity" if value > 0 else "-Infinity"
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value


def dumps_json(data: Any, indent: Any = 2) -> str:
    return json.dumps(json_safe(data), ensure_ascii=False, indent=indent, allow_nan=False)


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _save_json(path: Path, data: Dict[str, Any]) -> None:
    _atomic_write_text(path, dumps_json(data) + "\n")


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_csv(rows: Iterable[Dict[str, Any]], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_cell(row[name]) for name in fields])
    return buf.getvalue()


def write_csv(path: Path, rows: Iterable[Dict[str, Any]], fields: Sequence[str]) -> None:
    _atomic_write_text(path, format_csv(rows, fields))


def write_metrics_csv(path: Path, records: List[Dict[str, Any]]) -> None:
    """metrics.csv with header iter,loss,disagreement,messages_cum,volume_cum,events."""
    write_csv(path, records, CSV_FIELDS)


def write_metrics_jsonl(path: Path, records: List[Dict[str, Any]]) -> None:
    lines = [dumps_json({name: rec[name] for name in CSV_FIELDS}, indent=None) for rec in records]
    _atomic_write_text(path, "\n".join(lines) + "\n")


def write_traces_csv(path: Path, records: List[Dict[str, Any]]) -> None:
    """traces.csv: iter,pe,block,param_norm,threshold,sent per (PE, block)."""
    write_csv(path, records, TRACE_FIELDS)

