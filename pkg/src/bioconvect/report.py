"""
Reports

Responsibilities:
- Build the JSON documents of every subcommand (each carries a `kind`)
- Validate them against schemas/report.schema.json
- Render the plain-text and CSV forms the CLI prints or writes
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .certificate import Certificate, Check
from .solver import PicardHistory, SolveReport
from .verify import (
    AuditReport,
    ConvergenceTable,
    OracleReport,
    format_convergence_table,
)

logger = logging.getLogger(__name__)

RULE = "─" * 60


def _clean(value: Any) -> Any:
    """Replace non-finite floats by None so the document is strict JSON."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


# ============================================================================
# JSON documents
# ============================================================================


def certificate_report(cert: Certificate) -> dict:
    return _clean(
        {
            "kind": "certificate",
            "version": __version__,
            "exists": cert.exists,
            "unique": cert.unique,
            "certificate": cert.to_dict(),
        }
    )


def solve_report(
    cert: Certificate | None,
    report: SolveReport,
    history: PicardHistory,
    files: dict[str, str] | None = None,
) -> dict:
    return _clean(
        {
            "kind": "solve",
            "version": __version__,
            "converged": report.converged,
            "certificate": cert.to_dict() if cert is not None else None,
            "solve": report.to_dict(),
            "history": history.to_dict(),
            "files": dict(files or {}),
        }
    )


def verify_report(
    audits: Sequence[AuditReport], oracle: OracleReport | None = None
) -> dict:
    return _clean(
        {
            "kind": "verify",
            "version": __version__,
            "passed": all(a.passed for a in audits),
            "audits": [a.to_dict() for a in audits],
            "oracle": oracle.to_dict() if oracle is not None else None,
        }
    )


def mms_report(table: ConvergenceTable) -> dict:
    return _clean({"kind": "mms", "version": __version__, "table": table.to_dict()})


@lru_cache(maxsize=1)
def load_schema() -> dict:
    text = (resources.files("bioconvect") / "schemas" / "report.schema.json").read_text(
        encoding="utf-8"
    )
    return json.loads(text)


def validate_report(document: dict) -> None:
    """Raise jsonschema.ValidationError when the document breaks the schema."""
    import jsonschema

    jsonschema.Draft202012Validator(load_schema()).validate(document)


def dumps_report(document: dict) -> str:
    validate_report(document)
    return json.dumps(document, indent=2, ensure_ascii=False, allow_nan=False)


def write_json_report(document: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_file = path.with_suffix(path.suffix + ".tmp")
    with open(tmp_file, "w", encoding="utf-8") as f:
        f.write(dumps_report(document) + "\n")
    tmp_file.replace(path)
    return path


# ============================================================================
# Text and CSV
# ============================================================================


def _fmt(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _check_line(c: Check) -> str:
    mark = "✓" if c.satisfied else "✗"
    return (
        f"  {mark} {c.name:<28} lhs={_fmt(c.lhs):<20} "
        f"rhs={_fmt(c.rhs):<20} slack={_fmt(c.slack)}"
    )


def format_certificate(cert: Certificate) -> str:
    lines = [RULE, "Certificate", RULE]
    for key, value in cert.to_flat():
        if key.startswith(("existence.", "uniqueness.")):
            continue
        lines.append(f"{key} = {_fmt(value)}")
    lines += [RULE, "Existence"]
    lines += [_check_line(c) for c in cert.existence_checks]
    lines += ["Uniqueness"]
    lines += [_check_line(c) for c in cert.uniqueness_checks]
    lines.append(RULE)
    return "\n".join(lines)


def certificate_csv(cert: Certificate) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["key", "value"])
    for key, value in cert.to_flat():
        writer.writerow([key, _fmt(value)])
    return buf.getvalue()


def format_solve(report: SolveReport) -> str:
    n = report.norms
    lines = [
        RULE,
        "Solve",
        RULE,
        f"iterations = {report.iterations}",
        f"converged = {_fmt(report.converged)}",
        f"u_V = {_fmt(n.u_V)}",
        f"n_H1 = {_fmt(n.n_H1)}",
        f"c_H1 = {_fmt(n.c_H1)}",
        f"div_u = {_fmt(n.div_u)}",
        f"contraction_ratio = {_fmt(report.contraction_ratio)}",
        f"pi = {_fmt(report.pi_value)}",
        f"within_certified_region = {_fmt(report.within_certified_region)}",
    ]
    for name, value in report.residuals.items():
        lines.append(f"residual.{name} = {_fmt(value)}")
    for name, value in report.max_mean_drift.items():
        lines.append(f"mean_drift.{name} = {_fmt(value)}")
    if report.bound_checks:
        lines.append("A-priori bounds")
        lines += [_check_line(c) for c in report.bound_checks]
    lines.append(RULE)
    return "\n".join(lines)


def format_audits(
    audits: Sequence[AuditReport], oracle: OracleReport | None = None
) -> str:
    lines = [RULE]
    for audit in audits:
        mark = "✓" if audit.passed else "✗"
        lines.append(f"{mark} {audit.kind} audit")
        lines += [_check_line(c) for c in audit.checks]
    if oracle is not None:
        mark = "✓" if oracle.agreed else "✗"
        lines.append(
            f"{mark} oracle discrepancy = {_fmt(oracle.discrepancy)}"
            f" (tolerance {_fmt(oracle.tolerance)})"
        )
        for msg in oracle.messages:
            lines.append(f"⚠ {msg}")
    lines.append(RULE)
    return "\n".join(lines)


def format_mms(table: ConvergenceTable) -> str:
    return "\n".join([RULE, format_convergence_table(table), RULE])
