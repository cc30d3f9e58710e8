"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations

from typing import Any


class VerificationError(Exception):
    """Base class for every error raised by this package."""


class EmptyObservation(VerificationError, ValueError):
    """A tool produced nothing usable."""


class ScoreRangeError(VerificationError, ValueError):
    pass


class GradeOutOfRange(ScoreRangeError):
    pass


class ConfidenceRange(VerificationError, ValueError):
    pass


class ParseFailure(VerificationError, ValueError):
    pass


class ProtocolError(VerificationError):
    """A backend kept replying with unusable output after all retries."""

    def __init__(self, message: str, attempts: int = 0, last_reply: str | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.last_reply = last_reply


class PlannerProtocol(ProtocolError):
    pass


class GraderProtocol(ProtocolError):
    pass


class DebateProtocol(ProtocolError):
    pass


class JudgeProtocol(ProtocolError):
    pass


class BackendError(VerificationError):
    """Transport-level failure talking to a model backend."""


class ScriptMiss(BackendError):
    """The scripted backend has no reply for a request."""


class DegenerateSearch(VerificationError):
    """The search budget ran out without a single successful expansion."""

    def __init__(self, message: str, partial: Any = None):
        super().__init__(message)
        self.partial = partial


class SearchInvariantError(VerificationError):
    pass


class UnknownTool(VerificationError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else "unknown tool"


class DuplicateTool(VerificationError, ValueError):
    pass


class InjectAfterStart(VerificationError):
    pass


class MissingDetector(VerificationError):
    pass


class DatasetError(VerificationError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class LabelMappingError(DatasetError):
    pass


class EmptyEvaluation(VerificationError, ValueError):
    pass


class ConfigError(VerificationError, ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations
