"""DiagnosticsReport: named statistics, thresholds and derived pass flags."""

import json
import math
import operator
from dataclasses import dataclass, field

SCHEMA_VERSION = 1

_OPS = {
    "<=": operator.le,
    "<": operator.lt,
    ">=": operator.ge,
    ">": operator.gt,
}


@dataclass
class DiagnosticsReport:
    """Result of one check.

    Pass flags are never stored independently: each entry of `criteria` is a
    ``(flag, statistic, op, threshold)`` tuple and :attr:`passed` re-evaluates
    them, so overriding a threshold and recomputing is always consistent.
    """

    name: str
    manifest: dict = field(default_factory=dict)
    statistics: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    criteria: list = field(default_factory=list)
    replicas: int = 1
    notes: list = field(default_factory=list)

    def require(self, flag, statistic, op, threshold):
        if op not in _OPS:
            raise ValueError(f"unknown comparison {op!r}")
        self.criteria.append((flag, statistic, op, threshold))
        return self

    @property
    def passed(self):
        out = {}
        for flag, stat, op, thr in self.criteria:
            value = self.statistics[stat]
            limit = self.thresholds[thr]
            ok = (not math.isnan(value)) and _OPS[op](value, limit)
            out[flag] = out.get(flag, True) and bool(ok)
        return out

    @property
    def all_passed(self):
        return all(self.passed.values())

    def with_thresholds(self, **overrides):
        unknown = set(overrides) - set(self.thresholds)
        if unknown:
            raise KeyError(f"unknown thresholds {sorted(unknown)}")
        thr = dict(self.thresholds)
        thr.update(overrides)
        return DiagnosticsReport(self.name, dict(self.manifest), dict(self.statistics),
                                 thr, list(self.criteria), self.replicas, list(self.notes))

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "manifest": self.manifest,
            "statistics": {k: _jsonable(v) for k, v in self.statistics.items()},
            "thresholds": {k: _jsonable(v) for k, v in self.thresholds.items()},
            "criteria": [list(c) for c in self.criteria],
            "passed": self.passed,
            "all_passed": self.all_passed,
            "replicas": self.replicas,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(
            name=d["name"],
            manifest=d.get("manifest", {}),
            statistics={k: float(v) for k, v in d["statistics"].items()},
            thresholds={k: float(v) for k, v in d["thresholds"].items()},
            criteria=[tuple(c) for c in d.get("criteria", [])],
            replicas=int(d.get("replicas", 1)),
            notes=list(d.get("notes", [])),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary_line(self):
        status = "PASS" if self.all_passed else "FAIL"
        stats = ", ".join(f"{k}={v:.4g}" for k, v in self.statistics.items())
        return f"[{status}] {self.name}: {stats}"


def _jsonable(v):
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        return str(v)
    return v
