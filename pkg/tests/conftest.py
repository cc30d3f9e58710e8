from __future__ import annotations

from datetime import datetime, timezone
from typing import Callable

import pytest

from mmverify.agents import Agents, ScriptedBackend
from mmverify.mcts import SubtaskResult
from mmverify.model import (
    Action,
    Claim,
    EvidenceAtom,
    Modality,
    Stance,
    Subtask,
    SubtaskLabelValue,
    Trajectory,
)
from mmverify.scoring import TrajectoryScores
from mmverify.tools import BUILTIN_TOOLS, Environment, builtin_registry

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)
TOOL_NAMES = [d.name for d in BUILTIN_TOOLS]


def frozen_env(fixtures=None, registry=None) -> Environment:
    return Environment(registry or builtin_registry(fixtures), clock=lambda: T0)


def scripted_agents(entries, **kw) -> Agents:
    return Agents(ScriptedBackend(entries), **kw)


class StubAgents:
    """Duck-typed planner and grader driven by plain functions.

    ``coherence(subtask, L)`` and ``stance(subtask, n_evidence)`` decide the
    scores; the planner cycles through ``tools``.
    """

    def __init__(
        self,
        coherence: Callable[[Subtask, int], float] = lambda s, n: 0.5,
        stance: Callable[[Subtask, int], tuple[Stance, int]] = lambda s, n: (Stance.REAL, 1),
        tools=("corpus_search", "entity_lookup_fixture", "time_check_fixture", "vqa_fixture", "image_caption_fixture"),
        fail_planner: Callable[[Claim, Subtask], bool] = lambda c, s: False,
    ):
        self.coherence = coherence
        self.stance = stance
        self.tools = list(tools)
        self.fail_planner = fail_planner
        self.plans = 0

    def plan_next_action(self, state, trajectory, tools):
        from mmverify.errors import PlannerProtocol

        if self.fail_planner(state.claim, state.subtask):
            raise PlannerProtocol("scripted failure", attempts=3)
        self.plans += 1
        return Action(self.tools[len(trajectory) % len(self.tools)], {})

    def grade_coherence(self, claim, subtask, trajectory):
        return self.coherence(Subtask(subtask), len(trajectory))

    def grade_stance(self, claim, subtask, evidence):
        return self.stance(Subtask(subtask), len(evidence))


def make_result(
    subtask: Subtask,
    stance: Stance,
    confidence: float,
    evidence_contents=("some evidence",),
    utility: float = 0.5,
) -> SubtaskResult:
    modality = Modality(subtask)
    evidence = tuple(
        EvidenceAtom(modality, text, f"corpus_search#{i}", T0) for i, text in enumerate(evidence_contents, 1)
    )
    grade = round(confidence * 10)
    return SubtaskResult(
        subtask=subtask,
        label=SubtaskLabelValue.of(subtask, stance),
        grade=grade,
        evidence=evidence,
        best_trajectory=Trajectory(),
        scores=TrajectoryScores(utility, confidence, stance),
        stopped_early=False,
        steps_used=1,
        budget=8,
    )


@pytest.fixture
def claim() -> Claim:
    return Claim("c1", "images/c1.jpg", "Officials attended the ceremony shown in the photo.")


# --- acceptance summary ------------------------------------------------------

_ACCEPTANCE: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE.get(report.nodeid)
        if prev != "FAIL":
            _ACCEPTANCE[report.nodeid] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, status in _ACCEPTANCE.items():
        terminalreporter.write_line(f"{status}  {nodeid.split('::')[-1]}")
