"""Role contracts for every model-backed step, with bounded retries."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import TYPE_CHECKING, Any, Mapping, Sequence, TypeVar

import yaml
from pydantic import BaseModel

from mmverify.agents.backends import AgentRequest, AgentRole, Backend, DEBATE_ROLES
from mmverify.agents.parsing import (
    CoherenceReply,
    JudgeReply,
    PlannerReply,
    StanceReply,
    TurnReply,
    parse_structured_reply,
)
from mmverify.errors import (
    BackendError,
    DebateProtocol,
    GraderProtocol,
    JudgeProtocol,
    ParseFailure,
    PlannerProtocol,
    ProtocolError,
)
from mmverify.model import Action, Claim, EvidenceAtom, Label, SearchState, Stance, Subtask, Trajectory

if TYPE_CHECKING:
    from mmverify.debate import Stage1Bundle
    from mmverify.tools import ToolDescriptor

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
M = TypeVar("M", bound=BaseModel)


@dataclass(frozen=True)
class AgentTurn:
    role: AgentRole
    round: int
    label: Label
    confidence: float
    rationale: str = ""
    citations: frozenset[str] = field(default_factory=frozenset)

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role.value,
            "round": self.round,
            "label": self.label.value,
            "confidence": self.confidence,
            "rationale": self.rationale,
            "citations": sorted(self.citations),
        }


@dataclass(frozen=True)
class JudgeOutput:
    label: Label
    confidence: float
    override: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label.value, "confidence": self.confidence, "override": self.override}


@dataclass(frozen=True)
class PromptSet:
    version: int
    templates: Mapping[str, Mapping[str, str]]

    @classmethod
    def load(cls, path: str | None = None) -> "PromptSet":
        if path is None:
            text = resources.files("mmverify").joinpath("prompts/v1.yaml").read_text(encoding="utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        data = yaml.safe_load(text)
        templates = {r.value: data[r.value] for r in AgentRole}
        return cls(version=int(data.get("version", 0)), templates=templates)

    def render(self, role: AgentRole, **values: Any) -> tuple[dict[str, str], ...]:
        tpl = self.templates[role.value]
        values = {k: str(v) for k, v in values.items()}
        return (
            {"role": "system", "content": Template(tpl["system"]).safe_substitute(values).strip()},
            {"role": "user", "content": Template(tpl["user"]).safe_substitute(values).strip()},
        )


def _with_claim_keys(claim_id: str, *keys: str) -> tuple[str, ...]:
    return tuple(f"{claim_id}|{k}" for k in keys) + keys


def _render_evidence(evidence: Sequence[EvidenceAtom]) -> str:
    if not evidence:
        return "(none)"
    return "\n".join(f"- ({a.modality.value}, {a.source}) {a.content}" for a in evidence)


def _render_steps(steps: Sequence[Any]) -> str:
    if not steps:
        return "(none)"
    return "\n".join(
        f"{i}. {s.action.tool} {json.dumps(dict(s.action.args), sort_keys=True)} -> {s.observation}"
        for i, s in enumerate(steps, 1)
    )


class Agents:
    """Front door to the model-backed roles.

    ``backends`` is either one backend for every role or a mapping from role
    to backend (roles missing from the mapping fall back to ``"default"``).
    """

    def __init__(
        self,
        backends: Backend | Mapping[AgentRole | str, Backend],
        prompts: PromptSet | None = None,
        max_attempts: int = MAX_ATTEMPTS,
    ):
        if isinstance(backends, Mapping):
            table = {str(getattr(k, "value", k)): v for k, v in backends.items()}
            default = table.get("default")
            self._backends = {r: table.get(r.value, default) for r in AgentRole}
            missing = [r.value for r, b in self._backends.items() if b is None]
            if missing:
                raise ValueError(f"no backend configured for roles {missing}")
        else:
            self._backends = {r: backends for r in AgentRole}
        self.prompts = prompts or PromptSet.load()
        self.max_attempts = max_attempts

    def _ask(
        self,
        role: AgentRole,
        schema: type[M],
        keys: tuple[str, ...],
        error: type[ProtocolError],
        check=None,
        **values: Any,
    ) -> M:
        messages = self.prompts.render(role, **values)
        last_reply = None
        reason = ""
        for attempt in range(self.max_attempts):
            request = AgentRequest(role=role, messages=messages, keys=keys, attempt=attempt)
            try:
                last_reply = self._backends[role].complete(request)
                parsed = parse_structured_reply(last_reply, schema)
                if check is not None:
                    check(parsed)
                return parsed
            except (ParseFailure, BackendError) as exc:
                reason = str(exc)
                logger.debug("%s attempt %d rejected: %s", role.value, attempt + 1, exc)
        raise error(
            f"{role.value} gave no valid reply in {self.max_attempts} attempts ({reason})",
            attempts=self.max_attempts,
            last_reply=last_reply,
        )

    def plan_next_action(
        self,
        state: SearchState,
        trajectory: Trajectory,
        tools: Sequence["ToolDescriptor"],
    ) -> Action:
        if not tools:
            raise PlannerProtocol("no tools registered")
        names = {t.name for t in tools}
        last = trajectory.steps[-1].action.tool if trajectory.steps else "-"
        sub = state.subtask.value
        L = len(trajectory)

        def known_tool(reply: PlannerReply) -> None:
            if reply.tool not in names:
                raise ParseFailure(f"planner named unregistered tool {reply.tool!r}")

        reply = self._ask(
            AgentRole.PLANNER,
            PlannerReply,
            _with_claim_keys(state.claim.id, f"{sub}|{L}|{last}", f"{sub}|{L}", f"{sub}|*"),
            PlannerProtocol,
            check=known_tool,
            claim_text=state.claim.text,
            image_ref=state.claim.image_ref,
            subtask=sub,
            tools="\n".join(t.render() for t in tools),
            memory=_render_steps(state.memory),
            evidence=_render_evidence(state.evidence),
            length=L,
        )
        return Action(reply.tool, reply.args)

    def grade_coherence(self, claim: Claim, subtask: Subtask, trajectory: Trajectory) -> float:
        sub = Subtask(subtask).value
        reply = self._ask(
            AgentRole.COHERENCE_GRADER,
            CoherenceReply,
            _with_claim_keys(claim.id, f"{sub}|{','.join(trajectory.tools)}", f"{sub}|*"),
            GraderProtocol,
            claim_text=claim.text,
            subtask=sub,
            trajectory=_render_steps(trajectory.steps),
        )
        return reply.coherence

    def grade_stance(
        self, claim: Claim, subtask: Subtask, evidence: Sequence[EvidenceAtom]
    ) -> tuple[Stance, int]:
        sub = Subtask(subtask).value
        sources = ",".join(a.tool for a in evidence)
        reply = self._ask(
            AgentRole.STANCE_GRADER,
            StanceReply,
            _with_claim_keys(claim.id, f"{sub}|{sources}", f"{sub}|*"),
            GraderProtocol,
            claim_text=claim.text,
            image_ref=claim.image_ref,
            subtask=sub,
            evidence=_render_evidence(evidence),
        )
        return reply.stance, reply.grade

    def debate_turn(
        self,
        role: AgentRole,
        bundle: "Stage1Bundle",
        transcript: Sequence[Mapping[str, Any]],
        round_: int,
        rounds: int,
    ) -> AgentTurn:
        role = AgentRole(role)
        if role not in DEBATE_ROLES:
            raise ValueError(f"{role.value} is not a debate role")
        if round_ > rounds:
            raise ValueError(f"round {round_} exceeds {rounds}")
        reply = self._ask(
            role,
            TurnReply,
            _with_claim_keys(bundle.claim.id, f"r{round_}"),
            DebateProtocol,
            round=round_,
            rounds=rounds,
            bundle=bundle.render(),
            transcript=json.dumps(list(transcript), indent=1, sort_keys=True) if transcript else "(empty)",
        )
        valid = {c for c in reply.citations if c in bundle.evidence_index}
        dropped = set(reply.citations) - valid
        if dropped:
            logger.warning("%s round %d cited unknown evidence %s", role.value, round_, sorted(dropped))
        return AgentTurn(role, round_, reply.label, reply.confidence, reply.rationale, frozenset(valid))

    def judge(
        self,
        bundle: "Stage1Bundle",
        transcript: Sequence[Mapping[str, Any]],
        last_skeptic: Mapping[str, Any] | None,
        last_supporter: Mapping[str, Any] | None,
    ) -> JudgeOutput:
        if not transcript:
            raise JudgeProtocol("judge needs a non-empty transcript")
        a = last_skeptic["label"] if last_skeptic else "-"
        b = last_supporter["label"] if last_supporter else "-"
        reply = self._ask(
            AgentRole.JUDGE,
            JudgeReply,
            _with_claim_keys(bundle.claim.id, f"{a}|{b}"),
            JudgeProtocol,
            bundle=bundle.render(),
            transcript=json.dumps(list(transcript), indent=1, sort_keys=True),
            last_skeptic=json.dumps(last_skeptic, sort_keys=True),
            last_supporter=json.dumps(last_supporter, sort_keys=True),
        )
        return JudgeOutput(reply.label, reply.confidence, reply.override)
