"""Extraction and validation of structured (JSON) model replies."""

from __future__ import annotations

import json
from typing import Any, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from mmverify.errors import ParseFailure
from mmverify.model import Label, Stance

M = TypeVar("M", bound=BaseModel)

_decoder = json.JSONDecoder()


def extract_json_object(raw: str) -> dict[str, Any]:
    """Return the first well-formed JSON object embedded in ``raw``."""
    if not isinstance(raw, str):
        raise ParseFailure(f"reply is {type(raw).__name__}, not text")
    idx = raw.find("{")
    while idx != -1:
        try:
            obj, _ = _decoder.raw_decode(raw, idx)
        except json.JSONDecodeError:
            idx = raw.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = raw.find("{", idx + 1)
    raise ParseFailure("no JSON object found in reply")


def parse_structured_reply(raw: str, schema: type[M]) -> M:
    data = extract_json_object(raw)
    try:
        return schema.model_validate(data)
    except ValidationError as exc:
        fields = ", ".join(".".join(map(str, e["loc"])) or "<root>" for e in exc.errors())
        raise ParseFailure(f"{schema.__name__} invalid at {fields}") from exc


class _Reply(BaseModel):
    model_config = ConfigDict(extra="ignore", str_strip_whitespace=True)


class PlannerReply(_Reply):
    tool: str = Field(min_length=1)
    args: dict[str, Any] = Field(default_factory=dict)


class CoherenceReply(_Reply):
    coherence: float

    @field_validator("coherence")
    @classmethod
    def _clamp(cls, v: float) -> float:
        if v != v:  # NaN
            raise ValueError("coherence is NaN")
        return min(1.0, max(0.0, v))


class StanceReply(_Reply):
    stance: Stance
    grade: int = Field(ge=1, le=10)

    @field_validator("stance", mode="before")
    @classmethod
    def _upper(cls, v: Any) -> Any:
        return v.upper() if isinstance(v, str) else v


class TurnReply(_Reply):
    label: Label
    confidence: float = Field(ge=0.0, le=1.0)
    rationale: str = ""
    citations: list[str] = Field(default_factory=list)

    @field_validator("label", mode="before")
    @classmethod
    def _upper(cls, v: Any) -> Any:
        return v.upper() if isinstance(v, str) else v

    @field_validator("citations", mode="before")
    @classmethod
    def _listify(cls, v: Any) -> Any:
        if isinstance(v, str):
            return [v]
        return v


class JudgeReply(_Reply):
    label: Label
    confidence: float = Field(ge=0.0, le=1.0)
    override: bool = False

    @field_validator("label", mode="before")
    @classmethod
    def _upper(cls, v: Any) -> Any:
        return v.upper() if isinstance(v, str) else v
