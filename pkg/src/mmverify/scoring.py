"""Trajectory scoring: structural utility, confidence, node value, early stop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from mmverify.errors import GradeOutOfRange, ScoreRangeError
from mmverify.model import Stance, Subtask

# Weight of the structural base score against grader coherence; fixed, not tunable.
GRADER_WEIGHT = 0.5

DEFAULT_LAMBDA = 0.5
DEFAULT_THETA = 0.6


@dataclass(frozen=True)
class TrajectoryScores:
    utility: float
    confidence: float
    stance: Stance | None = None

    def __post_init__(self) -> None:
        for name in ("utility", "confidence"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ScoreRangeError(f"{name}={value} outside [0, 1]")

    @property
    def product(self) -> float:
        return self.utility * self.confidence

    def to_dict(self) -> dict:
        return {
            "utility": self.utility,
            "confidence": self.confidence,
            "stance": self.stance.value if self.stance else None,
        }


@dataclass(frozen=True)
class ScoringConfig:
    lambda_: float = DEFAULT_LAMBDA
    theta: Mapping[Subtask, float] = field(
        default_factory=lambda: {Subtask.TEXT: DEFAULT_THETA, Subtask.IMAGE: DEFAULT_THETA}
    )

    def violations(self) -> list[str]:
        out = []
        if not 0.0 <= self.lambda_ <= 1.0:
            out.append(f"scoring.lambda = {self.lambda_} ∉ [0,1]")
        for k in Subtask:
            if k not in self.theta:
                out.append(f"scoring.theta.{k.value} missing")
            elif not 0.0 < self.theta[k] <= 1.0:
                out.append(f"scoring.theta.{k.value} = {self.theta[k]} ∉ (0,1]")
        return out

    def theta_for(self, subtask: Subtask) -> float:
        return self.theta[Subtask(subtask)]


def progress(length: int) -> float:
    if length < 0:
        raise ValueError("trajectory length must be non-negative")
    return 1.0 / (1.0 + math.exp(-(length - 2)))


def unique_ratio(tools: Sequence[str]) -> float:
    return len(set(tools)) / max(1, len(tools))


def non_repeat(tools: Sequence[str]) -> float:
    repeats = sum(1 for i in range(1, len(tools)) if tools[i] == tools[i - 1])
    return 1.0 - repeats / max(1, len(tools) - 1)


def base_utility(tools: Sequence[str]) -> float:
    """Structural score: mean of progress, tool diversity and non-redundancy."""
    return (progress(len(tools)) + unique_ratio(tools) + non_repeat(tools)) / 3.0


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ScoreRangeError(f"{name}={value} outside [0, 1]")


def trajectory_utility(base: float, grader_coherence: float) -> float:
    _check_unit("base", base)
    _check_unit("grader_coherence", grader_coherence)
    value = GRADER_WEIGHT * base + (1.0 - GRADER_WEIGHT) * grader_coherence
    return min(1.0, max(0.0, value))


def confidence_from_grade(grade: int) -> float:
    if isinstance(grade, bool) or not isinstance(grade, int) or not 1 <= grade <= 10:
        raise GradeOutOfRange(f"grade {grade!r} outside 1..10")
    return grade / 10


def node_value(scores: TrajectoryScores, lambda_: float) -> float:
    if not 0.0 <= lambda_ <= 1.0:
        raise ScoreRangeError(f"lambda={lambda_} outside [0, 1]")
    return lambda_ * scores.utility + (1.0 - lambda_) * scores.confidence


def termination_met(scores: TrajectoryScores, theta_k: float) -> bool:
    # exact comparison, no epsilon
    return scores.utility * scores.confidence >= theta_k
