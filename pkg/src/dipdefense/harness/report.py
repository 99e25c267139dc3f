"""Report files: ``rows.csv`` (one line per image and condition) and
``report.json`` (aggregates and config snapshot), plus ``timings.json``.

Floats are written with ``repr`` so reading and rewriting a report
reproduces the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..errors import InputError
from .experiment import BOOL_FIELDS, FLOAT_FIELDS, INT_FIELDS, LIST_FIELDS, ROW_FIELDS, EvaluationReport

ROWS_FILE = "rows.csv"
SUMMARY_FILE = "report.json"
TIMINGS_FILE = "timings.json"


def _cell(key, value) -> str:
    if key in LIST_FIELDS:
        return ";".join(repr(LIST_FIELDS[key](v)) for v in value)
    if key in FLOAT_FIELDS:
        return repr(float(value))
    if key in BOOL_FIELDS:
        return "true" if value else "false"
    return str(value)


def _parse(key, raw: str):
    if key in LIST_FIELDS:
        return [LIST_FIELDS[key](v) for v in raw.split(";")] if raw else []
    if key in FLOAT_FIELDS:
        return float(raw)
    if key in INT_FIELDS:
        return int(raw)
    if key in BOOL_FIELDS:
        return raw == "true"
    return raw


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([_cell(k, r[k]) for k in ROW_FIELDS])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != ROW_FIELDS:
        raise InputError("rows.csv has unexpected columns")
    return [{k: _parse(k, r[k]) for k in ROW_FIELDS} for r in reader]


def emit_report(report: EvaluationReport, path) -> Path:
    """Write the report into directory ``path``; returns that directory."""
    if not report.rows:
        raise InputError("refusing to write a report without rows")
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    (d / ROWS_FILE).write_text(rows_to_csv(report.rows))
    summary = {"aggregates": report.aggregates, "config": report.config}
    (d / SUMMARY_FILE).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if report.timings:
        (d / TIMINGS_FILE).write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n")
    return d


def read_report(path) -> EvaluationReport:
    d = Path(path)
    if not (d / ROWS_FILE).exists():
        raise InputError(f"{d} holds no {ROWS_FILE}")
    rows = rows_from_csv((d / ROWS_FILE).read_text())
    summary = json.loads((d / SUMMARY_FILE).read_text())
    timings = json.loads((d / TIMINGS_FILE).read_text()) if (d / TIMINGS_FILE).exists() else {}
    return EvaluationReport(rows=rows, config=summary["config"], timings=timings)


def read_stored_aggregates(path) -> dict:
    return json.loads((Path(path) / SUMMARY_FILE).read_text())["aggregates"]
