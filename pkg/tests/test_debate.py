import pytest
from hypothesis import given, strategies as st

from conftest import T0, make_result, scripted_agents
from mmverify.agents import AgentRole
from mmverify.debate import (
    DebateConfig,
    build_bundle,
    effective_confidence,
    final_verdict,
    novelty_factor,
    run_debate,
    simple_fusion,
)
from mmverify.mcts import Stage1Outcome
from mmverify.model import Label, Origin, Stance, Subtask
from mmverify.tools import DetectorReport, detector_evidence


def _bundle(claim, text=(Stance.FAKE, 0.8), image=(Stance.REAL, 0.6), detector=None):
    t = make_result(Subtask.TEXT, text[0], text[1], ["report one", "report two"])
    i = make_result(Subtask.IMAGE, image[0], image[1], ["photo caption"])
    return build_bundle(claim, Stage1Outcome(t, i, []), detector)


def _turn(label, conf, cites):
    return {"label": label, "confidence": conf, "rationale": "r", "citations": cites}


@pytest.mark.parametrize(
    "cites, history, expected",
    [({"e1"}, set(), 1.0), ({"e1"}, {"e1", "e2"}, 0.7), (set(), {"e1"}, 0.7), (set(), set(), 0.7)],
)
def test_novelty_factor(cites, history, expected):
    assert novelty_factor(cites, history, 0.7) == expected


@pytest.mark.parametrize("kappa, c, expected", [(1.0, 0.8, 0.8), (0.7, 0.9, 0.63), (0.7, 0.0, 0.0)])
def test_effective_confidence(kappa, c, expected):
    assert effective_confidence(kappa, c) == pytest.approx(expected)


@given(st.sets(st.sampled_from("abcde")), st.sets(st.sampled_from("abcde")), st.floats(0.01, 0.99))
def test_novelty_is_one_or_penalty(cites, history, pi):
    k = novelty_factor(cites, history, pi)
    assert k in (1.0, pi)
    assert (k == pi) is (cites <= history)


def test_bundle_ids(claim):
    atom = detector_evidence(DetectorReport("fake", 0.9, "d"), now=T0)
    b = _bundle(claim, detector=atom)
    assert list(b.evidence_index) == ["D1", "T1", "T2", "I1"]
    assert b.detector_id == "D1"
    assert "[D1]" in b.render()


def test_reused_citations_penalised(claim):
    agents = scripted_agents([
        {"role": "skeptic", "key": "*", "reply": _turn("TEXT_FAKE", 0.9, ["T1"])},
        {"role": "supporter", "key": "*", "reply": _turn("REAL", 0.6, ["I1"])},
        {"role": "judge", "key": "*", "reply": {"label": "TEXT_FAKE", "confidence": 0.8}},
    ])
    t = run_debate(_bundle(claim), agents, DebateConfig(rounds=3, novelty_penalty=0.7))
    skeptic = [r.effective_confidence for r in t.turns if r.turn.role is AgentRole.SKEPTIC]
    assert skeptic == pytest.approx([0.9, 0.63, 0.63])
    assert t.consensus_round is None and len(t.turns) == 6


def test_turns_alternate(claim):
    agents = scripted_agents([
        {"role": "skeptic", "key": "*", "reply": _turn("TEXT_FAKE", 0.9, ["T1"])},
        {"role": "supporter", "key": "*", "reply": _turn("REAL", 0.6, [])},
        {"role": "judge", "key": "*", "reply": {"label": "TEXT_FAKE", "confidence": 0.8}},
    ])
    t = run_debate(_bundle(claim), agents, DebateConfig(rounds=3))
    roles = [r.turn.role for r in t.turns]
    assert roles == [AgentRole.SKEPTIC, AgentRole.SUPPORTER] * 3
    assert [r.turn.round for r in t.turns] == [1, 1, 2, 2, 3, 3]
    assert all(r.novelty in (1.0, 0.7) for r in t.turns)


def test_later_agents_see_penalised_confidence(claim):
    seen = []

    class Recorder:
        def debate_turn(self, role, bundle, view, r, rounds):
            seen.append(list(view))
            from mmverify.agents import AgentTurn

            return AgentTurn(role, r, Label.TEXT_FAKE if role is AgentRole.SKEPTIC else Label.REAL, 0.9, "", frozenset({"T1"}))

        def judge(self, bundle, view, a, b):
            from mmverify.agents import JudgeOutput

            return JudgeOutput(Label.REAL, 0.9, False)

    run_debate(_bundle(claim), Recorder(), DebateConfig(rounds=2))
    # round-1 turns cite fresh evidence; the round-2 skeptic reuses T1
    assert seen[2][0]["confidence"] == 0.9
    assert seen[3][2]["confidence"] == pytest.approx(0.63)


def test_consensus_stops_after_round_one(claim):
    agents = scripted_agents([
        {"role": "skeptic", "key": "r1", "reply": _turn("TEXT_FAKE", 0.8, ["T1"])},
        {"role": "supporter", "key": "r1", "reply": _turn("TEXT_FAKE", 0.7, ["T2"])},
        {"role": "judge", "key": "*", "reply": {"label": "TEXT_FAKE", "confidence": 0.9}},
    ])
    t = run_debate(_bundle(claim), agents, DebateConfig(rounds=3))
    assert len(t.turns) == 2
    assert t.consensus_round == 1
    v = final_verdict(t, _bundle(claim), DebateConfig())
    assert (v.label, v.confidence, v.origin) == (Label.TEXT_FAKE, 0.9, Origin.JUDGE)


def test_single_round_disagreement_judged(claim):
    agents = scripted_agents([
        {"role": "skeptic", "key": "*", "reply": _turn("TEXT_FAKE", 0.8, ["T1"])},
        {"role": "supporter", "key": "*", "reply": _turn("REAL", 0.7, ["I1"])},
        {"role": "judge", "key": "TEXT_FAKE|REAL", "reply": {"label": "REAL", "confidence": 0.9, "override": False}},
    ])
    bundle = _bundle(claim)
    t = run_debate(bundle, agents, DebateConfig(rounds=1))
    assert len(t.turns) == 2
    v = final_verdict(t, bundle, DebateConfig())
    assert (v.label, v.confidence, v.origin) == (Label.REAL, 0.9, Origin.JUDGE)


def _judged(claim, judge_reply):
    agents = scripted_agents([
        {"role": "skeptic", "key": "*", "reply": _turn("TEXT_FAKE", 0.8, ["T1"])},
        {"role": "supporter", "key": "*", "reply": _turn("REAL", 0.7, ["I1"])},
        {"role": "judge", "key": "*", "reply": judge_reply},
    ])
    bundle = _bundle(claim, text=(Stance.FAKE, 0.8), image=(Stance.REAL, 0.6))
    t = run_debate(bundle, agents, DebateConfig())
    return t, final_verdict(t, bundle, DebateConfig(judge_min_conf=0.5))


def test_low_confidence_judge_falls_back(claim):
    _, v = _judged(claim, {"label": "REAL", "confidence": 0.4})
    assert (v.label, v.origin) == (Label.TEXT_FAKE, Origin.FUSION)
    assert v.confidence == pytest.approx(0.7)


def test_judge_at_threshold_accepted(claim):
    _, v = _judged(claim, {"label": "REAL", "confidence": 0.5})
    assert (v.label, v.origin) == (Label.REAL, Origin.JUDGE)


def test_judge_failure_falls_back(claim):
    t, v = _judged(claim, "not a verdict")
    assert t.judge_output is None and t.judge_error
    assert v.origin is Origin.FUSION and v.label is Label.TEXT_FAKE


def test_debate_failure_still_judged_or_fused(claim):
    agents = scripted_agents([
        {"role": "skeptic", "key": "*", "reply": "garbled"},
        {"role": "judge", "key": "*", "reply": {"label": "REAL", "confidence": 0.9}},
    ])
    bundle = _bundle(claim)
    t = run_debate(bundle, agents, DebateConfig())
    assert t.debate_error and not t.turns
    assert final_verdict(t, bundle, DebateConfig()).origin is Origin.FUSION


@pytest.mark.parametrize(
    "text, image, expected",
    [
        ((Stance.REAL, 0.8), (Stance.REAL, 0.6), (Label.REAL, 0.7)),
        ((Stance.FAKE, 0.9), (Stance.FAKE, 0.9), (Label.BOTH_FAKE, 0.9)),
        ((Stance.REAL, 1.0), (Stance.FAKE, 0.5), (Label.IMAGE_FAKE, 0.75)),
        ((Stance.FAKE, 0.6), (Stance.REAL, 0.4), (Label.TEXT_FAKE, 0.5)),
    ],
)
def test_fusion_table(text, image, expected):
    v = simple_fusion(make_result(Subtask.TEXT, *text), make_result(Subtask.IMAGE, *image))
    assert v.label is expected[0]
    assert v.confidence == pytest.approx(expected[1])
    assert v.origin is Origin.FUSION


def test_config_violation_message():
    assert DebateConfig(novelty_penalty=1.5).violations() == ["debate.novelty_penalty = 1.5 ∉ (0,1)"]
    assert DebateConfig().violations() == []
