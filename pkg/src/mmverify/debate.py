"""Skeptic/supporter debate over stage-one evidence, judged, with a fusion fallback."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping

from mmverify.agents import AgentRole, AgentTurn, JudgeOutput
from mmverify.errors import DebateProtocol, JudgeProtocol
from mmverify.mcts import Stage1Outcome, SubtaskResult
from mmverify.model import Claim, EvidenceAtom, Origin, Verdict, fuse_labels

logger = logging.getLogger(__name__)

DEFAULT_ROUNDS = 3
DEFAULT_NOVELTY_PENALTY = 0.7
DEFAULT_JUDGE_MIN_CONF = 0.5


@dataclass(frozen=True)
class DebateConfig:
    rounds: int = DEFAULT_ROUNDS
    novelty_penalty: float = DEFAULT_NOVELTY_PENALTY
    judge_min_conf: float = DEFAULT_JUDGE_MIN_CONF
    stop_on_consensus: bool = True

    def violations(self) -> list[str]:
        out = []
        if self.rounds < 1:
            out.append(f"debate.rounds = {self.rounds} < 1")
        if not 0.0 < self.novelty_penalty < 1.0:
            out.append(f"debate.novelty_penalty = {self.novelty_penalty} ∉ (0,1)")
        if not 0.0 <= self.judge_min_conf <= 1.0:
            out.append(f"debate.judge_min_conf = {self.judge_min_conf} ∉ [0,1]")
        return out


@dataclass(frozen=True)
class Stage1Bundle:
    claim: Claim
    text_result: SubtaskResult
    image_result: SubtaskResult
    evidence_index: Mapping[str, EvidenceAtom]
    detector_id: str | None = None

    def render(self) -> str:
        lines = [
            f"Claim text: {self.claim.text}",
            f"Image: {self.claim.image_ref}",
            "Stage-one summaries:",
        ]
        for r in (self.text_result, self.image_result):
            lines.append(
                f"- {r.subtask.value} subtask: {r.label.value} "
                f"(confidence {r.scores.confidence:.2f}, utility {r.scores.utility:.2f})"
            )
        lines.append("Evidence:")
        for eid, atom in self.evidence_index.items():
            lines.append(f"[{eid}] ({atom.modality.value}, {atom.source}) {atom.content}")
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {
            "detector_id": self.detector_id,
            "evidence": {k: a.to_dict() for k, a in self.evidence_index.items()},
        }


def build_bundle(claim: Claim, stage1: Stage1Outcome, detector_atom: EvidenceAtom | None = None) -> Stage1Bundle:
    """Index stage-one evidence as ``D1`` (detector), ``T1..`` (text) and ``I1..`` (image)."""
    index: dict[str, EvidenceAtom] = {}
    if detector_atom is not None:
        index["D1"] = detector_atom
    for prefix, result in (("T", stage1.text), ("I", stage1.image)):
        n = 0
        for atom in result.evidence:
            if detector_atom is not None and atom == detector_atom:
                continue
            n += 1
            index[f"{prefix}{n}"] = atom
    return Stage1Bundle(
        claim, stage1.text, stage1.image, index, "D1" if detector_atom is not None else None
    )


def novelty_factor(citations: set[str] | frozenset[str], history: set[str] | frozenset[str], pi: float) -> float:
    return 1.0 if set(citations) - set(history) else pi


def effective_confidence(kappa: float, c: float) -> float:
    return kappa * c


@dataclass(frozen=True)
class TurnRecord:
    turn: AgentTurn
    novelty: float
    effective_confidence: float

    def view(self) -> dict[str, Any]:
        """What later agents and the judge see: the penalised confidence only."""
        return {
            "role": self.turn.role.value,
            "round": self.turn.round,
            "label": self.turn.label.value,
            "confidence": self.effective_confidence,
            "rationale": self.turn.rationale,
            "citations": sorted(self.turn.citations),
            "novelty": self.novelty,
        }

    def to_dict(self) -> dict[str, Any]:
        d = self.turn.to_dict()
        d["raw_confidence"] = d.pop("confidence")
        d["novelty"] = self.novelty
        d["effective_confidence"] = self.effective_confidence
        return d


@dataclass
class DebateTranscript:
    turns: list[TurnRecord] = field(default_factory=list)
    judge_output: JudgeOutput | None = None
    judge_error: str | None = None
    consensus_round: int | None = None
    debate_error: str | None = None

    @property
    def rounds_used(self) -> int:
        return max((t.turn.round for t in self.turns), default=0)

    def last(self, role: AgentRole) -> TurnRecord | None:
        for t in reversed(self.turns):
            if t.turn.role is role:
                return t
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "turns": [t.to_dict() for t in self.turns],
            "consensus_round": self.consensus_round,
            "rounds_used": self.rounds_used,
            "debate_error": self.debate_error,
            "judge": self.judge_output.to_dict() if self.judge_output else None,
            "judge_error": self.judge_error,
        }


def run_debate(bundle: Stage1Bundle, agents: Any, cfg: DebateConfig) -> DebateTranscript:
    transcript = DebateTranscript()
    history: dict[AgentRole, set[str]] = {AgentRole.SKEPTIC: set(), AgentRole.SUPPORTER: set()}
    for r in range(1, cfg.rounds + 1):
        labels = {}
        for role in (AgentRole.SKEPTIC, AgentRole.SUPPORTER):
            view = [t.view() for t in transcript.turns]
            try:
                turn = agents.debate_turn(role, bundle, view, r, cfg.rounds)
            except DebateProtocol as exc:
                transcript.debate_error = f"{role.value} round {r}: {exc}"
                logger.warning("debate truncated: %s", transcript.debate_error)
                break
            kappa = novelty_factor(turn.citations, history[role], cfg.novelty_penalty)
            # history grows only after this turn's own novelty is fixed
            history[role] |= turn.citations
            transcript.turns.append(TurnRecord(turn, kappa, effective_confidence(kappa, turn.confidence)))
            labels[role] = turn.label
        if transcript.debate_error:
            break
        if cfg.stop_on_consensus and labels[AgentRole.SKEPTIC] is labels[AgentRole.SUPPORTER]:
            transcript.consensus_round = r
            break

    if not transcript.turns:
        transcript.judge_error = "no completed debate turns"
        return transcript
    view = [t.view() for t in transcript.turns]
    last_a = transcript.last(AgentRole.SKEPTIC)
    last_b = transcript.last(AgentRole.SUPPORTER)
    try:
        transcript.judge_output = agents.judge(
            bundle, view, last_a.view() if last_a else None, last_b.view() if last_b else None
        )
    except JudgeProtocol as exc:
        transcript.judge_error = str(exc)
        logger.warning("judge failed, falling back to fusion: %s", exc)
    return transcript


def simple_fusion(text_result: SubtaskResult, image_result: SubtaskResult) -> Verdict:
    label = fuse_labels(text_result.label, image_result.label)
    confidence = (text_result.scores.confidence + image_result.scores.confidence) / 2
    return Verdict(label, confidence, Origin.FUSION)


def final_verdict(transcript: DebateTranscript, bundle: Stage1Bundle, cfg: DebateConfig) -> Verdict:
    judge = transcript.judge_output
    # a failed judge counts as zero confidence
    c_j = judge.confidence if judge is not None else 0.0
    if judge is not None and c_j >= cfg.judge_min_conf:
        return Verdict(judge.label, c_j, Origin.JUDGE)
    return simple_fusion(bundle.text_result, bundle.image_result)
