"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import random
import time
from contextlib import contextmanager
from dataclasses import replace

import pytest

from conftest import StubAgents, frozen_env, make_result, scripted_agents
from mmverify.agents import AgentRole, Agents, ScriptedBackend
from mmverify.cli import main
from mmverify.config import load_config
from mmverify.debate import (
    DebateConfig,
    build_bundle,
    final_verdict,
    novelty_factor,
    run_debate,
    simple_fusion,
)
from mmverify.harness import build_report, dumps_report, evaluate, load_dataset, run_batch
from mmverify.mcts import (
    Edge,
    SearchConfig,
    Stage1Outcome,
    TreeNode,
    run_stage1,
    run_subtask_search,
    select_path,
    uct_score,
)
from mmverify.model import Action, Claim, Label, Origin, SearchState, Stance, Subtask
from mmverify.scoring import (
    ScoringConfig,
    TrajectoryScores,
    base_utility,
    confidence_from_grade,
    node_value,
    progress,
    termination_met,
)
from mmverify.synthetic import generate
from mmverify.tools import DetectorReport


@contextmanager
def criterion(n, title):
    try:
        yield
    except BaseException:
        print(f"\nFAIL criterion {n}: {title}")
        raise
    print(f"\nPASS criterion {n}: {title}")


@pytest.fixture(scope="module")
def synth200(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth200")
    return out, generate(out, n=200, seed=0)


def test_criterion_01_scoring_formulas():
    with criterion(1, "scoring formula suite"):
        start = time.perf_counter()
        assert progress(2) == 0.5
        assert progress(4) == pytest.approx(0.880797, abs=1e-6)
        assert base_utility(["search", "vqa", "search"]) == pytest.approx(0.799242, abs=1e-6)
        assert confidence_from_grade(7) == 0.7
        assert node_value(TrajectoryScores(0.6, 0.8), 0.5) == 0.7
        assert termination_met(TrajectoryScores(1.0, 0.6), 0.6) is True
        assert time.perf_counter() - start < 1.0


def _brute_force_first_move(stats, visits, c):
    best, best_score = 0, -math.inf
    for i, (q, n) in enumerate(stats):
        s = q / (n + 1) + c * math.sqrt(math.log(visits + 1) / (n + 1))
        if s > best_score:
            best, best_score = i, s
    return best


def test_criterion_02_uct_oracle():
    with criterion(2, "UCT oracle equivalence over 10^4 edge sets"):
        start = time.perf_counter()
        rng = random.Random(2024)
        claim = Claim("u", "u.jpg", "uct")
        state = SearchState(claim, Subtask.TEXT)
        for _ in range(10_000):
            k = rng.randint(1, 8)
            stats = []
            for _ in range(k):
                n = rng.randint(0, 50)
                stats.append((rng.uniform(0, 1) * n, n))
            visits = sum(n for _, n in stats) + rng.randint(0, 3)
            c = rng.uniform(0.05, 3.0)
            root = TreeNode(state, visits=visits)
            for i, (q, n) in enumerate(stats):
                root.edges.append(Edge(Action(f"t{i}"), TreeNode(state, parent=root, index=i + 1), q=q, n=n))
            path = select_path(root, c, fully_expanded=lambda node: node is root)
            assert root.edges.index(root.edge_to(path[1])) == _brute_force_first_move(stats, visits, c)
        for c in (0.1, 1.0, 1.414, 7.0):
            assert uct_score(1.0, 1, 0, c) == 0.5
        assert time.perf_counter() - start < 5.0


def test_criterion_03_early_stop_minimality():
    with criterion(3, "early stop after iteration 2"):
        claim = Claim("e", "e.jpg", "early stop")
        targets = {1: 0.6, 2: 0.9, 3: 0.9}
        grades = {0: 1, 1: 5, 2: 8, 3: 8}
        tools = ["corpus_search", "entity_lookup_fixture", "time_check_fixture"]

        def coherence(subtask, length):
            return min(1.0, max(0.0, 2 * targets[length] - base_utility(tools[:length])))

        stub = StubAgents(coherence=coherence, stance=lambda s, n: (Stance.REAL, grades[n]), tools=tools)
        cfg = SearchConfig(rollout_depth=0, scoring=ScoringConfig(theta={"text": 0.6, "image": 0.6}))
        result = run_subtask_search(claim, Subtask.TEXT, cfg, stub, frozen_env())
        products = [r["best_product"] for r in result.trace]
        assert products[:2] == pytest.approx([0.30, 0.72])
        assert result.steps_used == 2
        assert result.stopped_early is True


def _refuting_stub(image_stance):
    def stance(subtask, n):
        if subtask is Subtask.TEXT:
            return (Stance.FAKE, 9) if n >= 3 else (Stance.REAL, 3)
        return image_stance

    return StubAgents(coherence=lambda s, n: 0.3, stance=stance)


def test_criterion_04_pruning_monotonicity():
    with criterion(4, "pruning moves 5 steps to the image search; fused verdict never REAL"):
        claim = Claim("p", "p.jpg", "pruning")
        cfg = SearchConfig(rollout_depth=0)
        out = run_stage1(claim, cfg, _refuting_stub((Stance.REAL, 3)), frozen_env())
        assert out.text.steps_used == 3 and out.text.scores.confidence == 0.9
        assert out.image.budget - cfg.budget[Subtask.IMAGE] == 5
        for image_stance in [(s, g) for s in Stance for g in range(1, 11)]:
            o = run_stage1(claim, cfg, _refuting_stub(image_stance), frozen_env())
            assert o.text.pruned
            assert simple_fusion(o.text, o.image).label is not Label.REAL


def _turn(label, conf, cites):
    return {"label": label, "confidence": conf, "rationale": "r", "citations": cites}


def _bundle(claim):
    t = make_result(Subtask.TEXT, Stance.FAKE, 0.8, ["report"])
    i = make_result(Subtask.IMAGE, Stance.REAL, 0.6, ["photo"])
    return build_bundle(claim, Stage1Outcome(t, i, []))


def test_criterion_05_debate_protocol():
    with criterion(5, "debate protocol suite"):
        claim = Claim("d", "d.jpg", "debate")
        bundle = _bundle(claim)
        assert novelty_factor({"e1"}, {"e1", "e2"}, 0.7) == 0.7
        assert novelty_factor(set(), {"e1"}, 0.7) == 0.7
        assert novelty_factor(set(), set(), 0.7) == 0.7
        assert novelty_factor({"e1"}, set(), 0.7) == 1.0

        reuse = scripted_agents([
            {"role": "skeptic", "key": "*", "reply": _turn("TEXT_FAKE", 0.9, ["T1"])},
            {"role": "supporter", "key": "*", "reply": _turn("REAL", 0.6, ["I1"])},
            {"role": "judge", "key": "*", "reply": {"label": "TEXT_FAKE", "confidence": 0.8}},
        ])
        t = run_debate(bundle, reuse, DebateConfig(rounds=3, novelty_penalty=0.7))
        eff = [r.effective_confidence for r in t.turns if r.turn.role is AgentRole.SKEPTIC]
        assert eff == pytest.approx([0.9, 0.63, 0.63])

        agree = scripted_agents([
            {"role": "skeptic", "key": "*", "reply": _turn("TEXT_FAKE", 0.8, ["T1"])},
            {"role": "supporter", "key": "*", "reply": _turn("TEXT_FAKE", 0.7, ["T1"])},
            {"role": "judge", "key": "*", "reply": {"label": "TEXT_FAKE", "confidence": 0.9}},
        ])
        t = run_debate(bundle, agree, DebateConfig(rounds=3))
        assert len(t.turns) == 2 and t.consensus_round == 1

        def judged(reply):
            agents = scripted_agents([
                {"role": "skeptic", "key": "*", "reply": _turn("TEXT_FAKE", 0.8, ["T1"])},
                {"role": "supporter", "key": "*", "reply": _turn("REAL", 0.7, ["I1"])},
                {"role": "judge", "key": "*", "reply": reply},
            ])
            tr = run_debate(bundle, agents, DebateConfig())
            return final_verdict(tr, bundle, DebateConfig(judge_min_conf=0.5))

        assert judged({"label": "REAL", "confidence": 0.4}).origin is Origin.FUSION
        failed = judged("}{ not json")
        assert failed.origin is Origin.FUSION and failed.label is Label.TEXT_FAKE


def test_criterion_06_fusion_totality():
    with criterion(6, "fusion totality"):
        expected = {
            (Stance.REAL, Stance.REAL): Label.REAL,
            (Stance.FAKE, Stance.REAL): Label.TEXT_FAKE,
            (Stance.REAL, Stance.FAKE): Label.IMAGE_FAKE,
            (Stance.FAKE, Stance.FAKE): Label.BOTH_FAKE,
        }
        for (zt, zi), label in expected.items():
            for ct in (0.1, 0.5, 1.0):
                for ci in (0.0, 0.7):
                    v = simple_fusion(make_result(Subtask.TEXT, zt, ct), make_result(Subtask.IMAGE, zi, ci))
                    assert v.label is label
                    assert v.confidence == pytest.approx((ct + ci) / 2)
                    assert (v.label is Label.REAL) is (zt is Stance.REAL and zi is Stance.REAL)


def test_criterion_07_metrics_oracle():
    with criterion(7, "metrics oracle TP=2 FP=1 FN=1 TN=6"):
        pairs = (
            [(Label.TEXT_FAKE, Label.TEXT_FAKE)] * 2
            + [(Label.REAL, Label.IMAGE_FAKE)]
            + [(Label.BOTH_FAKE, Label.REAL)]
            + [(Label.REAL, Label.REAL)] * 6
        )
        m = evaluate(pairs)
        assert m.accuracy == pytest.approx(0.8, abs=1e-12)
        assert m.precision == pytest.approx(0.6667, abs=1e-4)
        assert m.recall == pytest.approx(0.6667, abs=1e-4)
        assert m.f1 == pytest.approx(0.6667, abs=1e-4)
        emitted = json.loads(dumps_report({"metrics": m.to_dict()}))["metrics"]
        (tn, fp), (fn, tp) = emitted["confusion"]["matrix"]
        p = tp / (tp + fp)
        r = tp / (tp + fn)
        assert emitted["accuracy"] == (tp + tn) / (tp + tn + fp + fn)
        assert emitted["precision"] == p
        assert emitted["recall"] == r
        assert emitted["f1"] == 2 * p * r / (p + r)


def test_criterion_08_end_to_end_determinism(synth200, tmp_path):
    with criterion(8, "bench on 200 synthetic claims is byte-identical across runs"):
        out, cfg = synth200
        reports = []
        start = time.perf_counter()
        for i in range(2):
            path = tmp_path / f"report{i}.json"
            args = ["bench", str(out / "dataset.jsonl"), "--config", str(cfg), "--seed", "0",
                    "--workers", "4", "--out", str(path)]
            assert main(args) == 0
            reports.append(path.read_bytes())
        elapsed = time.perf_counter() - start
        assert reports[0] == reports[1]
        assert json.loads(reports[0])["summary"] == {"records": 200, "failed": 0}
        assert elapsed < 60.0


def test_criterion_09_hybrid_detector_echo(synth200):
    with criterion(9, "detector verdict flip flips the hybrid verdict; plain output unchanged"):
        out, cfg_path = synth200
        records = load_dataset(out / "dataset.jsonl")
        corpus = [json.loads(l) for l in (out / "fixtures" / "corpus_search.jsonl").read_text().splitlines()]
        captions = [json.loads(l) for l in (out / "fixtures" / "image_caption_fixture.jsonl").read_text().splitlines()]
        text_ok = {c["key"] for c in corpus if "CONFIRMS" in c["snippet"]}
        image_bad = {c["key"] for c in captions if "MANIPULATED" in c["snippet"]}
        chosen = [r for r in records if r.claim.id in text_ok & image_bad][:5]
        assert chosen

        flipped = []
        for rec in chosen:
            flipped += [
                replace(rec, detector_report=DetectorReport("fake", 0.9, "detector")),
                replace(rec, detector_report=DetectorReport("real", 0.9, "detector")),
            ]
        hybrid = load_config(cfg_path, {"mode": "hybrid"}).build_pipeline()
        plain = load_config(cfg_path).build_pipeline()
        h = run_batch(flipped, hybrid, "hybrid")
        p = run_batch(flipped, plain, "plain")
        for i in range(0, len(flipped), 2):
            fake_run, real_run = h[i], h[i + 1]
            assert fake_run.verdict.label in (Label.IMAGE_FAKE, Label.BOTH_FAKE)
            assert real_run.verdict.label is Label.REAL
            assert p[i].verdict == p[i + 1].verdict
            assert p[i].trace == p[i + 1].trace


class _Flaky:
    """Malformed output on the first two attempts of every request."""

    def __init__(self, inner):
        self.inner = inner
        self.malformed = 0

    def complete(self, request):
        if request.attempt < 2:
            self.malformed += 1
            return "<<not a json document>>" if request.attempt == 0 else '{"truncated": '
        return self.inner.complete(request)


class _BrokenPlannerFor:
    def __init__(self, inner, claim_ids):
        self.inner = inner
        self.claim_ids = claim_ids

    def complete(self, request):
        if any(cid in request.prompt_text for cid in self.claim_ids):
            return "I would rather not pick a tool."
        return self.inner.complete(request)


def test_criterion_10_protocol_robustness(synth200):
    with criterion(10, "retry recovery and per-record DegenerateSearch"):
        out, cfg_path = synth200
        records = load_dataset(out / "dataset.jsonl")[:12]
        script = ScriptedBackend.from_jsonl(out / "script.jsonl")
        cfg = load_config(cfg_path)

        clean = cfg.build_pipeline()
        baseline = run_batch(records, clean, "plain")

        flaky = _Flaky(script)
        pipeline = cfg.build_pipeline()
        pipeline.agents = Agents(flaky)
        recovered = run_batch(records, pipeline, "plain")
        assert all(o.ok for o in recovered)
        assert flaky.malformed > 0
        assert [o.verdict for o in recovered] == [o.verdict for o in baseline]
        roles_seen = {t["role"] for o in recovered for t in o.trace["debate"]["turns"]}
        assert roles_seen == {"skeptic", "supporter"}
        assert all(o.trace["debate"]["judge"] is not None for o in recovered)

        broken_ids = {records[3].claim.id, records[7].claim.id}
        pipeline = cfg.build_pipeline()
        pipeline.agents = Agents({"default": script, "planner": _BrokenPlannerFor(script, broken_ids)})
        outcomes = run_batch(records, pipeline, "plain", workers=4)
        assert len(outcomes) == len(records)
        for o in outcomes:
            if o.record.claim.id in broken_ids:
                assert o.error["type"] == "DegenerateSearch"
                assert o.trace["partial_iterations"]
            else:
                assert o.ok
        doc = build_report(outcomes, None)
        assert doc["summary"]["failed"] == 2
