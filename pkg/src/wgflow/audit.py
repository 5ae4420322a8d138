"""Structured outcome of an inequality audit."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

PASS = "PASS"
FAIL = "FAIL"
NOT_APPLICABLE = "N/A"


def _clean(v: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if hasattr(v, "tolist"):
        v = v.tolist()
    if isinstance(v, float):
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


@dataclass
class AuditReport:
    """Result of checking ``lhs <= rhs`` (or its mirror) within ``tol``.

    ``slack`` is oriented so that the audit passes iff ``slack >= -tol``.
    For audits over many instants, ``lhs``/``rhs`` are taken at the
    worst instant and ``slack`` is the minimum.
    """

    name: str
    lhs: float
    rhs: float
    slack: float
    tol: float
    verdict: str = ""
    details: dict = field(default_factory=dict)
    config_hash: str = ""
    runtime_s: float = 0.0

    def __post_init__(self) -> None:
        if not self.verdict:
            self.verdict = verdict_for(self.slack, self.tol)

    @property
    def passed(self) -> bool:
        return self.verdict in (PASS, NOT_APPLICABLE)

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "tol": self.tol,
            "verdict": self.verdict,
            "config_hash": self.config_hash,
        }
        if include_runtime:
            d["runtime_s"] = self.runtime_s
        if self.details:
            d["details"] = self.details
        return _clean(d)

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.to_dict(include_runtime), sort_keys=True, indent=2)


def verdict_for(slack: float, tol: float) -> str:
    if slack is None or (isinstance(slack, float) and math.isnan(slack)):
        return FAIL
    return PASS if slack >= -tol else FAIL


def combine(name: str, parts: list[AuditReport], details: dict | None = None) -> AuditReport:
    """Aggregate sub-audits; fails if any applicable part fails."""
    applicable = [p for p in parts if p.verdict != NOT_APPLICABLE]
    if not applicable:
        rep = AuditReport(name, float("nan"), float("nan"), float("nan"), 0.0, NOT_APPLICABLE)
    else:
        worst = min(applicable, key=lambda p: p.slack + p.tol)
        verdict = PASS if all(p.passed for p in applicable) else FAIL
        rep = AuditReport(name, worst.lhs, worst.rhs, worst.slack, worst.tol, verdict)
    rep.details = dict(details or {})
    rep.details["parts"] = [p.to_dict(include_runtime=False) for p in parts]
    return rep
