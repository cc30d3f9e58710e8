"""End-to-end verification of one claim: tree search, then debate."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from mmverify.debate import (
    DebateConfig,
    DebateTranscript,
    Stage1Bundle,
    build_bundle,
    final_verdict,
    run_debate,
)
from mmverify.mcts import SearchConfig, Stage1Outcome, run_stage1
from mmverify.model import DEFAULT_MEMORY_BOUND, Claim, Verdict
from mmverify.tools import DetectorReport, Environment, detector_evidence


@dataclass
class ClaimOutcome:
    claim: Claim
    verdict: Verdict
    stage1: Stage1Outcome
    bundle: Stage1Bundle
    transcript: DebateTranscript
    detector: DetectorReport | None = None

    def trace(self) -> dict[str, Any]:
        return {
            "hybrid": self.detector is not None,
            "detector": self.detector.to_dict() if self.detector else None,
            "stage1": {
                "text": self.stage1.text.to_dict(),
                "image": self.stage1.image.to_dict(),
                "budget_transfers": self.stage1.transfers,
            },
            "bundle": self.bundle.to_dict(),
            "debate": self.transcript.to_dict(),
            "verdict": self.verdict.to_dict(),
        }


@dataclass
class Pipeline:
    agents: Any
    env: Environment
    search: SearchConfig = field(default_factory=SearchConfig)
    debate: DebateConfig = field(default_factory=DebateConfig)
    memory_bound: int = DEFAULT_MEMORY_BOUND

    def verify(self, claim: Claim, detector: DetectorReport | None = None) -> ClaimOutcome:
        """Verify ``claim``; passing a detector report switches on hybrid mode."""
        atom = detector_evidence(detector, now=self.env.clock()) if detector is not None else None
        stage1 = run_stage1(claim, self.search, self.agents, self.env, prior=atom, memory_bound=self.memory_bound)
        bundle = build_bundle(claim, stage1, atom)
        transcript = run_debate(bundle, self.agents, self.debate)
        verdict = final_verdict(transcript, bundle, self.debate)
        return ClaimOutcome(claim, verdict, stage1, bundle, transcript, detector)
