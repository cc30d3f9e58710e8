"""UCT tree search over tool calls, one tree per subtask.

Text and image searches run interleaved (one iteration each per round) so a
search that confidently refutes its side can hand its unused budget to the
other.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

from mmverify.errors import DegenerateSearch, PlannerProtocol, SearchInvariantError
from mmverify.model import (
    Action,
    Claim,
    EvidenceAtom,
    SearchState,
    Stance,
    Subtask,
    SubtaskLabelValue,
    Trajectory,
)
from mmverify.scoring import (
    ScoringConfig,
    TrajectoryScores,
    base_utility,
    confidence_from_grade,
    node_value,
    termination_met,
    trajectory_utility,
)
from mmverify.tools import Environment, inject_detector_evidence

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 8
DEFAULT_EXPLORATION = 1.414
DEFAULT_ROLLOUT_DEPTH = 1


class Planner(Protocol):
    def plan_next_action(self, state: SearchState, trajectory: Trajectory, tools: Sequence[Any]) -> Action: ...


class Grader(Protocol):
    def grade_coherence(self, claim: Claim, subtask: Subtask, trajectory: Trajectory) -> float: ...

    def grade_stance(self, claim: Claim, subtask: Subtask, evidence: Sequence[EvidenceAtom]) -> tuple[Stance, int]: ...


@dataclass(frozen=True)
class SearchConfig:
    budget: Mapping[Subtask, int] = field(
        default_factory=lambda: {Subtask.TEXT: DEFAULT_BUDGET, Subtask.IMAGE: DEFAULT_BUDGET}
    )
    exploration_constant: float = DEFAULT_EXPLORATION
    rollout_depth: int = DEFAULT_ROLLOUT_DEPTH
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    seed: int = 0

    def violations(self) -> list[str]:
        out = []
        for k in Subtask:
            b = self.budget.get(k)
            if b is None:
                out.append(f"search.budget.{k.value} missing")
            elif b < 1:
                out.append(f"search.budget.{k.value} = {b} < 1")
        if not self.exploration_constant > 0:
            out.append(f"search.exploration_constant = {self.exploration_constant} ≤ 0")
        if self.rollout_depth < 0:
            out.append(f"search.rollout_depth = {self.rollout_depth} < 0")
        return out + self.scoring.violations()


@dataclass(eq=False)
class Edge:
    action: Action
    child: "TreeNode"
    q: float = 0.0  # cumulative backed-up value
    n: int = 0


@dataclass(eq=False)
class TreeNode:
    state: SearchState
    trajectory: Trajectory = field(default_factory=Trajectory)
    parent: "TreeNode | None" = None
    index: int = 0
    edges: list[Edge] = field(default_factory=list)
    visits: int = 0
    value: float | None = None
    terminal: bool = False
    rescored: TrajectoryScores | None = None

    @property
    def children(self) -> list["TreeNode"]:
        return [e.child for e in self.edges]

    def edge_to(self, child: "TreeNode") -> Edge:
        for e in self.edges:
            if e.child is child:
                return e
        raise SearchInvariantError(f"node {child.index} is not a child of node {self.index}")


def uct_score(q_sum: float, n_edge: int, n_node: int, c: float) -> float:
    # (N+1) denominators as in the selection rule, not classic UCB1's N
    return q_sum / (n_edge + 1) + c * math.sqrt(math.log(n_node + 1) / (n_edge + 1))


def is_fully_expanded(node: TreeNode) -> bool:
    """Progressive widening: a node may hold up to ``isqrt(N(n))`` children (at least one)."""
    return bool(node.edges) and len(node.edges) >= max(1, math.isqrt(node.visits))


def best_edge(node: TreeNode, c: float) -> Edge:
    best, best_score = None, -math.inf
    for e in node.edges:
        s = uct_score(e.q, e.n, node.visits, c)
        if s > best_score:  # strict: earliest edge wins ties
            best, best_score = e, s
    return best


def select_path(
    root: TreeNode,
    c: float,
    fully_expanded: Callable[[TreeNode], bool] = is_fully_expanded,
) -> list[TreeNode]:
    path = [root]
    node = root
    while node.edges and fully_expanded(node) and not node.terminal:
        node = best_edge(node, c).child
        path.append(node)
    return path


def expand(node: TreeNode, planner: Planner, env: Environment, index: int = 0) -> TreeNode:
    """Ask the planner for one action, run it, and attach the resulting child.

    A planner that exhausts its retries marks ``node`` terminal and the
    ``PlannerProtocol`` error propagates.
    """
    if node.terminal:
        raise SearchInvariantError("cannot expand a terminal node")
    try:
        action = planner.plan_next_action(node.state, node.trajectory, env.registry.descriptors())
    except PlannerProtocol:
        node.terminal = True
        raise
    state, observation = env.step(node.state, action)
    child = TreeNode(state, node.trajectory.extend(action, observation), parent=node, index=index)
    node.edges.append(Edge(action, child))
    return child


def score_trajectory(
    grader: Grader, state: SearchState, trajectory: Trajectory
) -> TrajectoryScores:
    coherence = grader.grade_coherence(state.claim, state.subtask, trajectory)
    utility = trajectory_utility(base_utility(trajectory.tools), coherence)
    stance, grade = grader.grade_stance(state.claim, state.subtask, state.evidence)
    return TrajectoryScores(utility, confidence_from_grade(grade), Stance(stance))


def rollout_and_score(
    node: TreeNode,
    grader: Grader,
    env: Environment,
    depth: int,
    rng: random.Random,
) -> TrajectoryScores:
    """Score ``node`` after extending a copy of its path by up to ``depth`` random untried tools."""
    if depth < 0:
        raise ValueError("rollout depth must be >= 0")
    state, traj = node.state, node.trajectory
    names = env.registry.names()
    for _ in range(depth):
        tried = set(traj.tools)
        untried = [n for n in names if n not in tried]
        if not untried:
            break
        action = Action(rng.choice(untried), {})
        state, observation = env.step(state, action)
        traj = traj.extend(action, observation)
    return score_trajectory(grader, state, traj)


def backpropagate(path: Sequence[TreeNode], value: float) -> None:
    if not path:
        raise SearchInvariantError("empty path")
    edges = []
    for parent, child in zip(path, path[1:]):
        if child.parent is not parent:
            raise SearchInvariantError(f"path broken between nodes {parent.index} and {child.index}")
        edges.append(parent.edge_to(child))
    for node in path:
        node.visits += 1
    for e in edges:
        e.n += 1
        e.q += value
    path[-1].value = value


def subtask_label(
    claim: Claim,
    evidence: Sequence[EvidenceAtom],
    subtask: Subtask,
    grader: Grader,
) -> tuple[SubtaskLabelValue, int]:
    """Modality-qualified label plus 1-10 grade; empty evidence means authentic, grade 1."""
    if not evidence:
        return SubtaskLabelValue.of(subtask, Stance.REAL), 1
    stance, grade = grader.grade_stance(claim, subtask, evidence)
    confidence_from_grade(grade)
    return SubtaskLabelValue.of(subtask, stance), grade


@dataclass
class SubtaskResult:
    subtask: Subtask
    label: SubtaskLabelValue
    grade: int
    evidence: tuple[EvidenceAtom, ...]
    best_trajectory: Trajectory
    scores: TrajectoryScores
    stopped_early: bool
    steps_used: int
    budget: int
    pruned: bool = False
    low_confidence: bool = False
    trace: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "subtask": self.subtask.value,
            "label": self.label.value,
            "grade": self.grade,
            "scores": self.scores.to_dict(),
            "stopped_early": self.stopped_early,
            "pruned": self.pruned,
            "low_confidence": self.low_confidence,
            "steps_used": self.steps_used,
            "budget": self.budget,
            "evidence": [a.to_dict() for a in self.evidence],
            "best_trajectory": self.best_trajectory.to_dict(),
            "iterations": self.trace,
        }


class SubtaskSearch:
    """One subtask's tree, advanced an iteration at a time by ``step``."""

    def __init__(
        self,
        claim: Claim,
        subtask: Subtask,
        cfg: SearchConfig,
        agents: Any,
        env: Environment,
        *,
        prior: EvidenceAtom | None = None,
        memory_bound: int | None = None,
    ):
        self.claim = claim
        self.subtask = Subtask(subtask)
        self.cfg = cfg
        self.agents = agents
        self.env = env
        self.theta = cfg.scoring.theta_for(self.subtask)
        self.budget = cfg.budget[self.subtask]
        self.rng = random.Random(f"{cfg.seed}|{claim.id}|{self.subtask.value}")
        kwargs = {"memory_bound": memory_bound} if memory_bound else {}
        state = SearchState(claim, self.subtask, **kwargs)
        if prior is not None:
            state = inject_detector_evidence(state, prior)
        self.root = TreeNode(state)
        self.nodes = [self.root]
        self.used = 0
        self.expansions = 0
        self.stopped_early = False
        self.pruned = False
        self.done = False
        self.trace: list[dict[str, Any]] = []

    @property
    def active(self) -> bool:
        return not self.done

    @property
    def remaining(self) -> int:
        return max(0, self.budget - self.used)

    def best_node(self) -> TreeNode | None:
        best = None
        for n in self.nodes:
            if n.value is not None and (best is None or n.value > best.value):
                best = n
        return best

    def rescore(self, node: TreeNode) -> TrajectoryScores:
        if node.rescored is None:
            node.rescored = score_trajectory(self.agents, node.state, node.trajectory)
        return node.rescored

    def best_scores(self) -> TrajectoryScores | None:
        best = self.best_node()
        return self.rescore(best) if best is not None else None

    def confidently_fake(self) -> bool:
        scores = self.best_scores()
        return scores is not None and scores.stance is Stance.FAKE and scores.confidence >= self.theta

    def step(self) -> dict[str, Any]:
        if self.done:
            raise SearchInvariantError("search already finished")
        self.used += 1
        record: dict[str, Any] = {"iteration": self.used, "subtask": self.subtask.value}
        path = select_path(self.root, self.cfg.exploration_constant)
        leaf = path[-1]
        record["path"] = [n.index for n in path]
        if not leaf.terminal:
            try:
                child = expand(leaf, self.agents, self.env, index=len(self.nodes))
            except PlannerProtocol as exc:
                record["error"] = f"PlannerProtocol: {exc}"
                self._finish_iteration(record)
                return record
            self.nodes.append(child)
            self.expansions += 1
            path.append(child)
            leaf = child
            step = child.trajectory.steps[-1]
            record["expanded"] = child.index
            record["action"] = step.action.to_dict()
            record["observation"] = step.observation
        scores = rollout_and_score(leaf, self.agents, self.env, self.cfg.rollout_depth, self.rng)
        value = node_value(scores, self.cfg.scoring.lambda_)
        backpropagate(path, value)
        record["rollout"] = scores.to_dict()
        record["value"] = value
        self._finish_iteration(record)
        return record

    def _finish_iteration(self, record: dict[str, Any]) -> None:
        best = self.best_node()
        if best is not None:
            scores = self.rescore(best)
            record["best_node"] = best.index
            record["best_scores"] = scores.to_dict()
            record["best_product"] = scores.product
            if termination_met(scores, self.theta):
                self.stopped_early = True
                self.done = True
        root_dead = self.root.terminal and not self.root.edges
        if self.used >= self.budget or root_dead:
            self.done = True
        record["stop"] = self.done
        self.trace.append(record)
        if self.done and self.expansions == 0:
            raise DegenerateSearch(
                f"{self.subtask.value} search for claim {self.claim.id} made no expansion "
                f"in {self.used} iteration(s)",
                partial=self.trace,
            )

    def result(self) -> SubtaskResult:
        best = self.best_node()
        if best is None:
            raise DegenerateSearch(f"{self.subtask.value} search has no evaluated node", partial=self.trace)
        scores = self.rescore(best)
        evidence = best.state.evidence
        label, grade = subtask_label(self.claim, evidence, self.subtask, self.agents)
        return SubtaskResult(
            subtask=self.subtask,
            label=label,
            grade=grade,
            evidence=evidence,
            best_trajectory=best.trajectory,
            scores=scores,
            stopped_early=self.stopped_early,
            steps_used=self.used,
            budget=self.budget,
            pruned=self.pruned,
            low_confidence=not evidence,
            trace=list(self.trace),
        )

    def run(self) -> SubtaskResult:
        while self.active:
            self.step()
        return self.result()


def run_subtask_search(
    claim: Claim,
    subtask: Subtask,
    cfg: SearchConfig,
    agents: Any,
    env: Environment,
    prior: EvidenceAtom | None = None,
) -> SubtaskResult:
    return SubtaskSearch(claim, subtask, cfg, agents, env, prior=prior).run()


def prune_refuted(search_a: SubtaskSearch, search_b: SubtaskSearch) -> dict[str, int]:
    """Freeze searches that confidently refute their side; move their leftover budget.

    Returns the budget moved into each search, keyed by subtask value.
    """
    if search_a.claim.id != search_b.claim.id:
        raise SearchInvariantError("pruning across different claims")
    pair = (search_a, search_b)
    refuting = [s for s in pair if not s.pruned and s.best_node() is not None and s.confidently_fake()]
    leftovers = {id(s): s.remaining for s in refuting}
    for s in refuting:
        s.pruned = True
        s.done = True
    moved = {}
    for s in refuting:
        other = search_b if s is search_a else search_a
        if other.active and leftovers[id(s)]:
            other.budget += leftovers[id(s)]
            moved[other.subtask.value] = moved.get(other.subtask.value, 0) + leftovers[id(s)]
            logger.debug("moved %d steps from %s to %s", leftovers[id(s)], s.subtask.value, other.subtask.value)
    return moved


@dataclass
class Stage1Outcome:
    text: SubtaskResult
    image: SubtaskResult
    transfers: list[dict[str, Any]]


def run_stage1(
    claim: Claim,
    cfg: SearchConfig,
    agents: Any,
    env: Environment,
    prior: EvidenceAtom | None = None,
    memory_bound: int | None = None,
) -> Stage1Outcome:
    """Run both subtask searches interleaved, pruning after every round."""
    text = SubtaskSearch(claim, Subtask.TEXT, cfg, agents, env, prior=prior, memory_bound=memory_bound)
    image = SubtaskSearch(claim, Subtask.IMAGE, cfg, agents, env, prior=prior, memory_bound=memory_bound)
    transfers = []
    round_ = 0
    while text.active or image.active:
        round_ += 1
        for s in (text, image):
            if s.active:
                s.step()
        moved = prune_refuted(text, image)
        if moved:
            transfers.append({"round": round_, "moved": moved})
    return Stage1Outcome(text.result(), image.result(), transfers)
