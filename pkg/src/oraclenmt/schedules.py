"""Sampling-probability schedules.

``epsilon`` is the probability of feeding the decoder its own estimate
instead of the gold token; it grows with training progress (the gold-feeding
probability decays).  ``progress`` runs from 0 (start of training) to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import ConfigError

KINDS = ("constant", "linear", "exponential", "inverse_sigmoid")

_DEFAULTS = {
    "constant": {"eps": 0.25},
    "linear": {"k": 1.0, "c": 0.0},
    "exponential": {"k": 0.99, "T": 100.0},
    "inverse_sigmoid": {"k": 5.0, "T": 100.0},
}


@dataclass(frozen=True)
class SamplingSchedule:
    """The function progress -> epsilon, clamped to [0, 1]."""

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}; choose from {KINDS}")
        merged = dict(_DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ConfigError(f"unknown parameter(s) {sorted(unknown)} for {self.kind} schedule")
        merged.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", merged)
        self._validate()

    def _validate(self):
        p = self.params
        if self.kind == "constant":
            if not 0.0 <= p["eps"] <= 1.0:
                raise ConfigError(f"constant schedule needs 0 <= eps <= 1, got {p['eps']}")
        elif self.kind == "linear":
            if p["k"] < 0.0:
                raise ConfigError(f"linear schedule needs k >= 0, got {p['k']}")
            if not 0.0 <= p["c"] <= 1.0:
                raise ConfigError(f"linear schedule needs 0 <= c <= 1, got {p['c']}")
        elif self.kind == "exponential":
            if not 0.0 < p["k"] < 1.0:
                raise ConfigError(f"exponential schedule needs 0 < k < 1, got {p['k']}")
            if p["T"] <= 0.0:
                raise ConfigError(f"exponential schedule needs T > 0, got {p['T']}")
        elif self.kind == "inverse_sigmoid":
            if p["k"] <= 0.0:
                raise ConfigError(f"inverse_sigmoid schedule needs k > 0, got {p['k']}")
            if p["T"] <= 0.0:
                raise ConfigError(f"inverse_sigmoid schedule needs T > 0, got {p['T']}")

    def value(self, progress: float) -> float:
        return epsilon(self, progress)

    def describe(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


def epsilon(schedule: SamplingSchedule, progress: float) -> float:
    """Evaluate the self-feeding probability at the given training progress."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    p = schedule.params
    if schedule.kind == "constant":
        return p["eps"]
    if schedule.kind == "linear":
        return min(1.0, max(0.0, p["k"] * progress + p["c"]))
    if schedule.kind == "exponential":
        return 1.0 - p["k"] ** (progress * p["T"])
    # inverse_sigmoid; the exp argument can overflow for extreme T/k
    arg = progress * p["T"] / p["k"]
    if arg > 700.0:
        return 1.0
    return 1.0 - p["k"] / (p["k"] + math.exp(arg))


def constant(eps: float) -> SamplingSchedule:
    return SamplingSchedule("constant", {"eps": eps})
