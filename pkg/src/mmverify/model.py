"""Shared domain types: claims, evidence, search state, labels and verdicts."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from types import MappingProxyType
from typing import Any, Mapping

from mmverify.errors import ConfidenceRange, EmptyObservation

DEFAULT_MEMORY_BOUND = 5
DEFAULT_MAX_OBSERVATION_CHARS = 2048
TRUNCATION_MARKER = " [...truncated]"


class Modality(str, Enum):
    TEXT = "text"
    IMAGE = "image"


# A subtask is one per-modality verification goal; the two share a value set.
Subtask = Modality


class Label(str, Enum):
    REAL = "REAL"
    TEXT_FAKE = "TEXT_FAKE"
    IMAGE_FAKE = "IMAGE_FAKE"
    BOTH_FAKE = "BOTH_FAKE"


class BinaryLabel(str, Enum):
    REAL = "REAL"
    FAKE = "FAKE"


class Stance(str, Enum):
    REAL = "REAL"
    FAKE = "FAKE"


class Origin(str, Enum):
    JUDGE = "judge"
    FUSION = "fusion"


class SubtaskLabelValue(str, Enum):
    TEXT_REAL = "TEXT_REAL"
    TEXT_FAKE = "TEXT_FAKE"
    IMAGE_REAL = "IMAGE_REAL"
    IMAGE_FAKE = "IMAGE_FAKE"

    @classmethod
    def of(cls, subtask: Subtask, stance: Stance) -> "SubtaskLabelValue":
        return cls(f"{Subtask(subtask).name}_{Stance(stance).value}")

    @property
    def modality(self) -> Modality:
        return Modality.TEXT if self.name.startswith("TEXT") else Modality.IMAGE

    @property
    def is_fake(self) -> bool:
        return self.name.endswith("FAKE")


def _frozen_mapping(data: Mapping[str, Any] | None) -> Mapping[str, Any]:
    return MappingProxyType(dict(data or {}))


@dataclass(frozen=True)
class Claim:
    id: str
    image_ref: str
    text: str
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("claim id must be non-empty")
        if not self.text or not self.text.strip():
            raise ValueError(f"claim {self.id!r} has empty text")
        object.__setattr__(self, "metadata", _frozen_mapping(self.metadata))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "image_ref": self.image_ref,
            "text": self.text,
            "metadata": dict(self.metadata),
        }


@dataclass(frozen=True)
class EvidenceAtom:
    modality: Modality
    content: str
    source: str
    timestamp: datetime

    def __post_init__(self) -> None:
        if not self.content:
            raise EmptyObservation("evidence content must be non-empty")

    @property
    def tool(self) -> str:
        """Tool name part of the source locator."""
        return self.source.split("#", 1)[0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "modality": self.modality.value,
            "content": self.content,
            "source": self.source,
            "timestamp": self.timestamp.isoformat(),
        }


@dataclass(frozen=True)
class Action:
    tool: str
    args: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", _frozen_mapping(self.args))

    def __hash__(self) -> int:
        return hash((self.tool, tuple(sorted((k, repr(v)) for k, v in self.args.items()))))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Action):
            return NotImplemented
        return self.tool == other.tool and dict(self.args) == dict(other.args)

    def to_dict(self) -> dict[str, Any]:
        return {"tool": self.tool, "args": dict(self.args)}


@dataclass(frozen=True)
class Step:
    action: Action
    observation: str

    def to_dict(self) -> dict[str, Any]:
        return {"action": self.action.to_dict(), "observation": self.observation}


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Step, ...] = ()

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def tools(self) -> list[str]:
        return [s.action.tool for s in self.steps]

    def extend(self, action: Action, observation: str) -> "Trajectory":
        return Trajectory(self.steps + (Step(action, observation),))

    def to_dict(self) -> list[dict[str, Any]]:
        return [s.to_dict() for s in self.steps]


@dataclass(frozen=True)
class SearchState:
    """Per-node search state; updated functionally, never in place."""

    claim: Claim
    subtask: Subtask
    evidence: tuple[EvidenceAtom, ...] = ()
    memory: tuple[Step, ...] = ()
    memory_bound: int = DEFAULT_MEMORY_BOUND
    depth: int = 0

    def __post_init__(self) -> None:
        if self.memory_bound < 1:
            raise ValueError("memory bound must be >= 1")
        if len(self.memory) > self.memory_bound:
            raise ValueError("memory exceeds its bound")

    def advance(self, action: Action, observation: str, atom: EvidenceAtom) -> "SearchState":
        memory = (self.memory + (Step(action, observation),))[-self.memory_bound :]
        return replace(
            self,
            evidence=self.evidence + (atom,),
            memory=memory,
            depth=self.depth + 1,
        )

    def with_prior(self, atom: EvidenceAtom) -> "SearchState":
        return replace(self, evidence=(atom,) + self.evidence)


@dataclass(frozen=True)
class Verdict:
    label: Label
    confidence: float
    origin: Origin

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ConfidenceRange(f"verdict confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label.value,
            "confidence": self.confidence,
            "origin": self.origin.value,
        }


def normalize_evidence(
    observation: str,
    modality: Modality,
    source: str,
    now: datetime | None = None,
    max_chars: int = DEFAULT_MAX_OBSERVATION_CHARS,
) -> EvidenceAtom:
    """Turn a raw tool observation into an evidence atom.

    Content longer than ``max_chars`` keeps its first ``max_chars`` characters
    followed by ``TRUNCATION_MARKER``.
    """
    if observation is None or not observation.strip():
        raise EmptyObservation(f"empty observation from {source}")
    content = observation
    if len(content) > max_chars:
        content = content[:max_chars] + TRUNCATION_MARKER
    return EvidenceAtom(
        modality=Modality(modality),
        content=content,
        source=source,
        timestamp=now if now is not None else datetime.now(timezone.utc),
    )


def verdict_to_binary(verdict: Verdict | Label) -> BinaryLabel:
    label = verdict.label if isinstance(verdict, Verdict) else Label(verdict)
    return BinaryLabel.REAL if label is Label.REAL else BinaryLabel.FAKE


def fuse_labels(text: SubtaskLabelValue, image: SubtaskLabelValue) -> Label:
    """Combine per-modality labels into the four-way label space."""
    if text.modality is not Modality.TEXT or image.modality is not Modality.IMAGE:
        raise ValueError(f"modality mismatch: {text.value}, {image.value}")
    if text.is_fake and image.is_fake:
        return Label.BOTH_FAKE
    if text.is_fake:
        return Label.TEXT_FAKE
    if image.is_fake:
        return Label.IMAGE_FAKE
    return Label.REAL

