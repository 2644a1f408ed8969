"""Run reports, check outcomes, and frozen-regression files.

A report is emitted even when checks fail; failures carry the offending
values.  Frozen files pin previously observed values with a tolerance and
comparison mode, so later runs regress against them; identical values
re-freeze to byte-identical files (no timestamps inside).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional


@dataclass
class CheckResult:
    check_id: str
    value: float
    passed: bool
    tolerance: Optional[float] = None
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "check_id": self.check_id,
            "value": self.value,
            "tolerance": self.tolerance,
            "passed": bool(self.passed),
            "details": _plain(self.details),
        }


def _plain(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


@dataclass
class RunReport:
    config_digest: str
    kind: str
    seed: int
    checks: List[CheckResult]
    wall_clock_s: float
    artifacts: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_digest": self.config_digest,
                "kind": self.kind,
                "rng": {"base_seed": self.seed},
                "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks],
                "artifacts": self.artifacts,
                "wall_clock_s": self.wall_clock_s,
            },
            indent=2,
            sort_keys=True,
        )

    def summary_lines(self) -> List[str]:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            tol = f" (tol {c.tolerance:g})" if c.tolerance is not None else ""
            lines.append(f"[{status}] {c.check_id}: {c.value:.10g}{tol}")
        return lines


class FreezeError(RuntimeError):
    pass


def write_frozen(
    path,
    report: RunReport,
    check_ids: List[str],
    tolerances: Dict[str, float],
    modes: Optional[Dict[str, str]] = None,
) -> None:
    """Persist selected check values as regression anchors.

    mode 'band' compares |value - frozen| <= tol * max(1, |frozen|); mode
    'upper' asserts value <= frozen * (1 + tol); mode 'lower' asserts
    value >= frozen * (1 - tol).  Failed checks are refused.
    """
    modes = modes or {}
    by_id = {c.check_id: c for c in report.checks}
    entries = []
    for cid in check_ids:
        if cid not in by_id:
            raise FreezeError(f"check id {cid!r} not present in the report")
        chk = by_id[cid]
        if not chk.passed:
            raise FreezeError(f"refusing to freeze failed check {cid!r}")
        entries.append(
            {
                "check_id": cid,
                "frozen_value": chk.value,
                "tolerance": tolerances.get(cid, 0.05),
                "mode": modes.get(cid, "band"),
                "provenance": f"config:{report.config_digest}",
            }
        )
    payload = json.dumps({"frozen": sorted(entries, key=lambda e: e["check_id"])},
                         indent=2, sort_keys=True)
    Path(path).write_text(payload + "\n")


def load_frozen(path) -> List[dict]:
    data = json.loads(Path(path).read_text())
    return data["frozen"]


def compare_frozen(report: RunReport, frozen_entries: List[dict]) -> List[CheckResult]:
    """Regression checks of the report's values against frozen anchors."""
    by_id = {c.check_id: c for c in report.checks}
    out = []
    for entry in frozen_entries:
        cid = entry["check_id"]
        tol = float(entry["tolerance"])
        fv = float(entry["frozen_value"])
        if cid not in by_id:
            out.append(
                CheckResult(
                    check_id=f"frozen:{cid}",
                    value=float("nan"),
                    passed=False,
                    tolerance=tol,
                    details={"error": "check missing from report"},
                )
            )
            continue
        value = by_id[cid].value
        mode = entry.get("mode", "band")
        if mode == "upper":
            ok = value <= fv * (1.0 + tol)
        elif mode == "lower":
            ok = value >= fv * (1.0 - tol)
        else:
            ok = abs(value - fv) <= tol * max(1.0, abs(fv))
        out.append(
            CheckResult(
                check_id=f"frozen:{cid}",
                value=value,
                passed=ok,
                tolerance=tol,
                details={"frozen_value": fv, "mode": entry.get("mode", "band")},
            )
        )
    return out
