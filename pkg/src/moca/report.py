"""Machine-readable suite reports.

A report embeds the fully resolved config, one row per check, and a content
hash over everything except wall time and timestamp, so two runs with equal
configs and seeds produce byte-identical reports modulo those fields.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


@dataclass
class CheckResult:
    name: str
    status: str  # "pass" | "fail" | "skip"
    measured: float | None = None
    tolerance: float | None = None
    detail: str | None = None

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "measured": self.measured,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


@dataclass
class Report:
    suite: str
    config: dict
    checks: list[CheckResult] = field(default_factory=list)
    wall_time_s: float = 0.0
    created_at: str = ""

    def add(self, name: str, ok: bool, measured=None, tolerance=None, detail=None) -> CheckResult:
        r = CheckResult(
            name=name,
            status="pass" if ok else "fail",
            measured=_jsonable(measured),
            tolerance=tolerance,
            detail=detail,
        )
        self.checks.append(r)
        return r

    def skip(self, name: str, reason: str) -> CheckResult:
        r = CheckResult(name=name, status="skip", detail=reason)
        self.checks.append(r)
        return r

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def as_dict(self) -> dict:
        body = {
            "suite": self.suite,
            "status": "pass" if self.passed else "fail",
            "config": self.config,
            "checks": [c.as_dict() for c in self.checks],
        }
        body["content_hash"] = hashlib.sha256(
            json.dumps(body, sort_keys=True).encode()
        ).hexdigest()
        body["wall_time_s"] = self.wall_time_s
        body["created_at"] = self.created_at or time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        return body

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def print_summary(self) -> None:
        for c in self.checks:
            extra = ""
            if c.measured is not None:
                extra = f"  measured={c.measured:.3e}"
                if c.tolerance is not None:
                    extra += f" tol={c.tolerance:.1e}"
            elif c.detail:
                extra = f"  ({c.detail})"
            print(f"[{c.status.upper():4s}] {self.suite}::{c.name}{extra}")
        print(f"suite {self.suite}: {'PASS' if self.passed else 'FAIL'}")


def _jsonable(value):
    if value is None or isinstance(value, (int, float, str, bool)):
        return float(value) if isinstance(value, (int, float)) and not isinstance(value, bool) else value
    return float(value)


def load_schema() -> dict:
    return json.loads(resources.files("moca").joinpath("report_schema.json").read_text())
