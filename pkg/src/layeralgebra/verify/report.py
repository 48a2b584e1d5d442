"""Machine-readable results of a single check."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

PASS = "pass"
FAIL = "fail"
INAPPLICABLE = "inapplicable"

# "within": pass iff metric <= tolerance (equivalences, gradients).
# "exceeds": pass iff metric > tolerance (witnesses that a property breaks).
WITHIN = "within"
EXCEEDS = "exceeds"


@dataclass(frozen=True)
class CheckReport:
    name: str
    status: str
    metric: float
    tolerance: float
    expect: str = WITHIN
    instance: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def judge(cls, name: str, metric: float, tolerance: float, expect: str = WITHIN, **instance) -> "CheckReport":
        metric = float(metric)
        ok = metric <= tolerance if expect == WITHIN else metric > tolerance
        return cls(name, PASS if ok else FAIL, metric, float(tolerance), expect, instance)

    @classmethod
    def inapplicable(cls, name: str, reason: str, tolerance: float = 0.0, **instance) -> "CheckReport":
        return cls(name, INAPPLICABLE, float("nan"), tolerance, WITHIN, {"reason": reason, **instance})

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def negated(self, name: str) -> "CheckReport":
        """The same measurement read as a negative control: it passes iff the original failed."""
        status = PASS if self.status == FAIL else FAIL
        return CheckReport(name, status, self.metric, self.tolerance,
                           EXCEEDS if self.expect == WITHIN else WITHIN,
                           {**self.instance, "negative_control": True})

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["metric"] != d["metric"]:  # NaN is not valid JSON
            d["metric"] = None
        return d
