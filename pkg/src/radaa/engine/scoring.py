"""Rule-based scoring, classification and the adaptive decision table."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from radaa.engine.features import FeatureVector

DEFAULT_WEIGHTS = (0.25, 0.25, 0.15, 0.20, 0.15)
DEFAULT_THRESHOLDS = (0.35, 0.70)
ELEVATED_SUFFIX = ":elevated"


class RiskClass(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @classmethod
    def parse(cls, value: "str | RiskClass") -> "RiskClass":
        return value if isinstance(value, RiskClass) else cls[str(value).upper()]


class Posture(enum.Enum):
    NORMAL = 0.0
    ELEVATED = 0.2
    CRITICAL = 0.4

    @property
    def offset(self) -> float:
        return self.value

    def escalate(self) -> "Posture":
        order = list(Posture)
        return order[min(order.index(self) + 1, len(order) - 1)]


class Stage(enum.Enum):
    AUTHN = "AUTHN"
    TOKEN_ISSUE = "TOKEN_ISSUE"
    RESOURCE_ACCESS = "RESOURCE_ACCESS"


class Action(enum.Enum):
    PROCEED = "PROCEED"
    STEP_UP = "STEP_UP"
    LIMIT_SCOPES = "LIMIT_SCOPES"
    DENY = "DENY"
    DENY_AND_REVOKE = "DENY_AND_REVOKE"


class Source(enum.Enum):
    RULE = "RULE"
    KNN = "KNN"


@dataclass(frozen=True)
class RiskAssessment:
    score: float
    risk_class: RiskClass
    features: FeatureVector
    source: Source = Source.RULE

    def to_json(self) -> dict:
        return {
            "score": self.score,
            "class": self.risk_class.name,
            "features": list(self.features),
            "source": self.source.value,
        }


@dataclass(frozen=True)
class Decision:
    action: Action
    stripped_scopes: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.stripped_scopes and self.action is not Action.LIMIT_SCOPES:
            raise ValueError("stripped_scopes only apply to LIMIT_SCOPES")


def validate_weights(weights: Sequence[float]) -> tuple[float, ...]:
    weights = tuple(float(w) for w in weights)
    if len(weights) != 5 or any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError("weights must be five non-negative values summing to 1.0")
    return weights


def rule_score(f: FeatureVector, posture: Posture = Posture.NORMAL,
               weights: Sequence[float] = DEFAULT_WEIGHTS) -> float:
    raw = sum(w * x for w, x in zip(weights, f)) + posture.offset
    return min(1.0, max(0.0, raw))


def classify(score: float, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> RiskClass:
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score {score} outside [0, 1]")
    low, high = thresholds
    if score < low:
        return RiskClass.LOW
    if score < high:
        return RiskClass.MEDIUM
    return RiskClass.HIGH


def is_elevated(scope: str) -> bool:
    return scope.endswith(ELEVATED_SUFFIX)


def decide(assessment: RiskAssessment, stage: Stage, requested_scopes: Iterable[str] = ()) -> Decision:
    risk = assessment.risk_class
    if risk is RiskClass.LOW:
        return Decision(Action.PROCEED)
    if risk is RiskClass.MEDIUM:
        if stage is Stage.RESOURCE_ACCESS:
            stripped = frozenset(s for s in requested_scopes if is_elevated(s))
            return Decision(Action.LIMIT_SCOPES, stripped)
        return Decision(Action.STEP_UP)
    if stage is Stage.RESOURCE_ACCESS:
        return Decision(Action.DENY_AND_REVOKE)
    return Decision(Action.DENY)
