"""JSON and CSV export for simulation and load reports."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any

import jsonschema

from ..errors import ConfigError, IoFailure
from .load import LatencyReport
from .scenario import SimReport

__all__ = ["LATENCY_REPORT_SCHEMA", "SIM_REPORT_SCHEMA", "emit_report", "render_report", "schema_for"]

_INT_OR_NULL = {"type": ["integer", "null"]}

SIM_REPORT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["audit", "audit_logs_verified", "auths", "config", "end_ms", "errors", "invariants", "quorum",
                 "revocations", "stale_acceptance_count", "stale_acceptances", "unilateral", "windows_ms"],
    "additionalProperties": False,
    "properties": {
        "audit": {"type": ["object", "null"]},
        "audit_logs_verified": {"type": "array", "items": {"type": "boolean"}},
        "auths": {"type": "array", "items": {
            "type": "object",
            "required": ["auth_id", "user", "sent_ms", "gateway_ms", "decided_ms", "completed_ms", "outcome",
                         "reason", "votes"],
            "properties": {"auth_id": {"type": "integer"}, "user": {"type": "integer"},
                           "sent_ms": {"type": "integer"}, "gateway_ms": _INT_OR_NULL,
                           "decided_ms": _INT_OR_NULL, "completed_ms": _INT_OR_NULL,
                           "outcome": {"enum": ["accept", "reject", "pending"]}, "reason": {"type": "string"},
                           "votes": {"type": "array", "items": {"type": "string"}}}}},
        "config": {"type": "object"},
        "end_ms": {"type": "integer"},
        "errors": {"type": "array", "items": {"type": "string"}},
        "invariants": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "quorum": {"type": "integer", "minimum": 1},
        "revocations": {"type": "array", "items": {
            "type": "object",
            "required": ["commit_ms", "credential_id", "height", "node_seen_ms", "user", "window_ms"],
            "properties": {"window_ms": {"type": ["integer", "null"], "minimum": 0}}}},
        "stale_acceptance_count": {"type": "integer", "minimum": 0},
        "stale_acceptances": {"type": "array", "items": {
            "type": "object", "required": ["auth_id", "at_ms", "node_id", "revoked_height", "view_height"]}},
        "unilateral": {"type": "object", "required": ["unilateral_grant", "unilateral_deny"]},
        "windows_ms": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
}

LATENCY_REPORT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["config", "cpu", "errors", "max_ms", "mode", "outcomes", "p50_ms", "p95_ms", "p99_ms",
                 "per_node_processed", "request_count", "samples", "throughput_rps"],
    "additionalProperties": False,
    "properties": {
        "config": {"type": "object"},
        "cpu": {"type": "object", "additionalProperties": {"type": "number"}},
        "errors": {"type": "integer", "minimum": 0},
        "max_ms": {"type": "number"},
        "mode": {"enum": ["sim", "real"]},
        "outcomes": {"type": "object", "additionalProperties": {"type": "integer"}},
        "p50_ms": {"type": "number"},
        "p95_ms": {"type": "number"},
        "p99_ms": {"type": "number"},
        "per_node_processed": {"type": "object", "additionalProperties": {"type": "integer"}},
        "request_count": {"type": "integer", "minimum": 0},
        "samples": {"type": "array", "items": {
            "type": "object", "required": ["request_id", "client", "sent_ms", "latency_ms", "outcome"],
            "additionalProperties": False,
            "properties": {"request_id": {"type": "integer"}, "client": {"type": "integer"},
                           "sent_ms": {"type": "number"}, "latency_ms": {"type": "number", "minimum": 0},
                           "outcome": {"type": "string"}}}},
        "throughput_rps": {"type": "number", "minimum": 0},
    },
}

_SIM_CSV = ["auth_id", "user", "sent_ms", "gateway_ms", "decided_ms", "completed_ms", "outcome", "reason", "votes"]
_LOAD_CSV = ["request_id", "client", "sent_ms", "latency_ms", "outcome"]


def schema_for(report: SimReport | LatencyReport) -> dict[str, Any]:
    return SIM_REPORT_SCHEMA if isinstance(report, SimReport) else LATENCY_REPORT_SCHEMA


def _csv(header: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def render_report(report: SimReport | LatencyReport, fmt: str = "json") -> str:
    """Serialize with stable field order. CSV has one row per request."""
    if fmt == "json":
        doc = report.to_document()
        jsonschema.validate(doc, schema_for(report))
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        if isinstance(report, SimReport):
            rows = [[a[k] if k != "votes" else " ".join(a[k]) for k in _SIM_CSV] for a in report.auths]
            return _csv(_SIM_CSV, [["" if v is None else v for v in row] for row in rows])
        return _csv(_LOAD_CSV, [[getattr(s, k) for k in _LOAD_CSV] for s in report.samples])
    raise ConfigError(f"unknown report format {fmt!r}")


def emit_report(report: SimReport | LatencyReport, fmt: str, path: str | Path) -> Path:
    text = render_report(report, fmt)
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path
