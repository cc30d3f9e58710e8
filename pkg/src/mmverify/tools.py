"""Tool registry, environment stepping, fixture tools and detector evidence."""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping, Sequence

import httpx

from mmverify.errors import (
    ConfidenceRange,
    DuplicateTool,
    InjectAfterStart,
    UnknownTool,
    VerificationError,
)
from mmverify.model import (
    DEFAULT_MAX_OBSERVATION_CHARS,
    Action,
    Claim,
    EvidenceAtom,
    Modality,
    SearchState,
    normalize_evidence,
)

logger = logging.getLogger(__name__)

DETECTOR_SOURCE_PREFIX = "deepfake_detector:"
TOOL_ERROR_PREFIX = "TOOL_ERROR: "
NO_MATCH = "No matching record found."

Executor = Callable[[Claim, Mapping[str, Any]], str]
Clock = Callable[[], datetime]


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


class ModalityHint(str, Enum):
    TEXT = "text"
    IMAGE = "image"
    BOTH = "both"


class ToolKind(str, Enum):
    BUILTIN_FIXTURE = "builtin_fixture"
    EXTERNAL_COMMAND = "external_command"
    REMOTE_ENDPOINT = "remote_endpoint"


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    modality_hint: ModalityHint
    description: str
    kind: ToolKind = ToolKind.BUILTIN_FIXTURE

    def render(self) -> str:
        return f"- {self.name} [{self.modality_hint.value}]: {self.description}"


@dataclass(frozen=True)
class ToolRegistry:
    """Name-unique tool table. ``register`` returns a new registry."""

    _tools: Mapping[str, tuple[ToolDescriptor, Executor]] = field(
        default_factory=lambda: MappingProxyType({})
    )

    def register(self, descriptor: ToolDescriptor, executor: Executor) -> "ToolRegistry":
        if descriptor.name in self._tools:
            raise DuplicateTool(f"tool {descriptor.name!r} already registered")
        tools = dict(self._tools)
        tools[descriptor.name] = (descriptor, executor)
        return ToolRegistry(MappingProxyType(tools))

    def __contains__(self, name: object) -> bool:
        return name in self._tools

    def __len__(self) -> int:
        return len(self._tools)

    def names(self) -> list[str]:
        return list(self._tools)

    def descriptors(self) -> list[ToolDescriptor]:
        return [d for d, _ in self._tools.values()]

    def get(self, name: str) -> tuple[ToolDescriptor, Executor]:
        try:
            return self._tools[name]
        except KeyError:
            raise UnknownTool(f"tool {name!r} is not registered") from None


def register_tool(registry: ToolRegistry, descriptor: ToolDescriptor, executor: Executor) -> ToolRegistry:
    return registry.register(descriptor, executor)


def describe_tools(descriptors: Iterable[ToolDescriptor]) -> str:
    return "\n".join(d.render() for d in descriptors)


# --- fixture tools ---------------------------------------------------------


def load_fixture_corpus(path: str | Path) -> list[dict[str, str]]:
    """Read a ``{key, snippet}`` JSONL corpus, keeping file order."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if "key" not in row or "snippet" not in row:
                raise ValueError(f"{path}:{lineno}: fixture rows need 'key' and 'snippet'")
            entries.append({"key": str(row["key"]), "snippet": str(row["snippet"])})
    return entries


class FixtureTool:
    """Offline lookup tool over a keyed corpus.

    An entry matches when its key equals the ``q`` argument, the claim id or
    the image reference, or when the key occurs inside the claim text. The
    first matching entry in corpus order wins.
    """

    def __init__(self, entries: Sequence[Mapping[str, str]] = ()):
        self.entries = [dict(e) for e in entries]

    @classmethod
    def from_path(cls, path: str | Path | None) -> "FixtureTool":
        return cls(load_fixture_corpus(path) if path else [])

    def __call__(self, claim: Claim, args: Mapping[str, Any]) -> str:
        exact = {str(args["q"])} if args.get("q") else set()
        exact |= {claim.id, claim.image_ref}
        for entry in self.entries:
            key = entry["key"]
            if key in exact or (key and key in claim.text):
                return entry["snippet"]
        return NO_MATCH


BUILTIN_TOOLS: tuple[ToolDescriptor, ...] = (
    ToolDescriptor("corpus_search", ModalityHint.TEXT, "Look up reports about the claim in the keyed text corpus."),
    ToolDescriptor("image_caption_fixture", ModalityHint.IMAGE, "Describe what the image shows."),
    ToolDescriptor("entity_lookup_fixture", ModalityHint.TEXT, "Resolve people, places and organisations named in the claim."),
    ToolDescriptor("time_check_fixture", ModalityHint.BOTH, "Check dates and timing asserted by the claim."),
    ToolDescriptor("vqa_fixture", ModalityHint.IMAGE, "Answer questions about the image, including counterfactual ones."),
)


def builtin_registry(
    fixtures: Mapping[str, str | Path | Sequence[Mapping[str, str]]] | None = None,
) -> ToolRegistry:
    """Registry holding every builtin fixture tool.

    ``fixtures`` maps a tool name to a JSONL path or a list of entries; tools
    without data answer with ``NO_MATCH``.
    """
    fixtures = fixtures or {}
    unknown = set(fixtures) - {d.name for d in BUILTIN_TOOLS}
    if unknown:
        raise UnknownTool(f"no builtin fixture tool named {sorted(unknown)}")
    registry = ToolRegistry()
    for desc in BUILTIN_TOOLS:
        data = fixtures.get(desc.name)
        if data is None or isinstance(data, (str, Path)):
            tool = FixtureTool.from_path(data)
        else:
            tool = FixtureTool(data)
        registry = registry.register(desc, tool)
    return registry


# --- remote tools ----------------------------------------------------------


def remote_tool_executor(
    tool: str,
    url: str,
    timeout: float = 20.0,
    client: httpx.Client | None = None,
) -> Executor:
    """Executor that POSTs ``{tool, args, claim_text, image_ref}`` to ``url``."""
    http = client or httpx.Client(timeout=timeout)

    def run(claim: Claim, args: Mapping[str, Any]) -> str:
        payload = {"tool": tool, "args": dict(args), "claim_text": claim.text, "image_ref": claim.image_ref}
        resp = http.post(url, json=payload, timeout=timeout)
        resp.raise_for_status()
        body = resp.json()
        if body.get("error"):
            raise RuntimeError(str(body["error"]))
        if "observation" not in body:
            raise RuntimeError("response carries neither 'observation' nor 'error'")
        return str(body["observation"])

    return run


# --- environment -----------------------------------------------------------


def _error_reason(exc: BaseException) -> str:
    if isinstance(exc, (TimeoutError, httpx.TimeoutException, subprocess.TimeoutExpired)):
        return "timeout"
    return str(exc) or type(exc).__name__


class Environment:
    """Executes actions against a registry and folds results into state."""

    def __init__(
        self,
        registry: ToolRegistry,
        *,
        max_chars: int = DEFAULT_MAX_OBSERVATION_CHARS,
        clock: Clock = utc_now,
        retries: int = 1,
    ):
        self.registry = registry
        self.max_chars = max_chars
        self.clock = clock
        self.retries = retries

    def execute(self, claim: Claim, action: Action) -> str:
        _, executor = self.registry.get(action.tool)
        last: BaseException | None = None
        for attempt in range(self.retries + 1):
            try:
                observation = executor(claim, action.args)
            except Exception as exc:
                last = exc
                logger.debug("tool %s attempt %d failed: %r", action.tool, attempt + 1, exc)
                continue
            if observation is None or not str(observation).strip():
                return TOOL_ERROR_PREFIX + "empty observation"
            return str(observation)
        return TOOL_ERROR_PREFIX + _error_reason(last)

    def step(self, state: SearchState, action: Action) -> tuple[SearchState, str]:
        if action.tool not in self.registry:
            raise UnknownTool(f"tool {action.tool!r} is not registered")
        observation = self.execute(state.claim, action)
        atom = normalize_evidence(
            observation,
            state.subtask,
            f"{action.tool}#{state.depth + 1}",
            now=self.clock(),
            max_chars=self.max_chars,
        )
        return state.advance(action, observation, atom), observation


def step_environment(env: Environment, state: SearchState, action: Action) -> tuple[SearchState, str]:
    return env.step(state, action)


# --- deepfake detector adapter ---------------------------------------------


class DetectorVerdict(str, Enum):
    REAL = "real"
    FAKE = "fake"


@dataclass(frozen=True)
class DetectorReport:
    verdict: DetectorVerdict
    confidence: float
    detector_name: str

    def __post_init__(self) -> None:
        raw = getattr(self.verdict, "value", self.verdict)
        object.__setattr__(self, "verdict", DetectorVerdict(str(raw).lower()))
        if not 0.0 <= self.confidence <= 1.0:
            raise ConfidenceRange(f"detector confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {"verdict": self.verdict.value, "confidence": self.confidence, "name": self.detector_name}


def detector_evidence(report: DetectorReport, now: datetime | None = None) -> EvidenceAtom:
    if not 0.0 <= report.confidence <= 1.0:
        raise ConfidenceRange(f"detector confidence {report.confidence} outside [0, 1]")
    content = (
        f"Deepfake detector {report.detector_name} predicts {report.verdict.value} "
        f"with confidence {report.confidence:.2f}"
    )
    return EvidenceAtom(
        modality=Modality.IMAGE,
        content=content,
        source=DETECTOR_SOURCE_PREFIX + report.detector_name,
        timestamp=now if now is not None else utc_now(),
    )


def inject_detector_evidence(state: SearchState, atom: EvidenceAtom) -> SearchState:
    """Prepend a detector atom to a fresh subtask state."""
    if state.depth > 0:
        raise InjectAfterStart("detector evidence can only seed a search before its first step")
    return state.with_prior(atom)


def parse_detector_line(line: str, name: str) -> DetectorReport:
    parts = line.split()
    if len(parts) != 2:
        raise VerificationError(f"detector output {line!r} is not '<verdict> <confidence>'")
    try:
        return DetectorReport(DetectorVerdict(parts[0].lower()), float(parts[1]), name)
    except ValueError as exc:
        raise VerificationError(f"detector output {line!r}: {exc}") from exc


def run_detector_command(
    command: str | Sequence[str],
    image_path: str,
    name: str | None = None,
    timeout: float = 20.0,
) -> DetectorReport:
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    proc = subprocess.run(
        argv + [image_path], capture_output=True, text=True, timeout=timeout, check=False
    )
    if proc.returncode != 0:
        raise VerificationError(f"detector command exited {proc.returncode}: {proc.stderr.strip()}")
    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if not lines:
        raise VerificationError("detector command printed nothing")
    return parse_detector_line(lines[0], name or Path(argv[-1]).stem)
