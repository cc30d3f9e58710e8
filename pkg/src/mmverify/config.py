"""Run configuration: defaults < config file < command-line flags."""

from __future__ import annotations

import copy
import os
from importlib import resources
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import yaml

from mmverify.agents import AgentRole, Agents, PromptSet, RemoteBackend, ScriptedBackend
from mmverify.debate import DebateConfig
from mmverify.errors import ConfigError
from mmverify.harness import LABEL_MAPS, Mode
from mmverify.mcts import SearchConfig
from mmverify.model import Subtask
from mmverify.pipeline import Pipeline
from mmverify.scoring import ScoringConfig
from mmverify.tools import (
    BUILTIN_TOOLS,
    Environment,
    ModalityHint,
    ToolDescriptor,
    ToolKind,
    builtin_registry,
    remote_tool_executor,
    utc_now,
)

MAX_DEFAULT_WORKERS = 8
DEFAULT_SCRIPT = resources.files("mmverify").joinpath("scripts/default.jsonl")

DEFAULTS: dict[str, Any] = {
    "scoring": {"lambda": 0.5, "theta": {"text": 0.6, "image": 0.6}},
    "search": {
        "budget": {"text": 8, "image": 8},
        "exploration_constant": 1.414,
        "rollout_depth": 1,
        "seed": 0,
        "memory_bound": 5,
        "max_observation_chars": 2048,
    },
    "debate": {"rounds": 3, "novelty_penalty": 0.7, "judge_min_conf": 0.5, "stop_on_consensus": True},
    "backends": {"default": {"kind": "scripted", "script": None}},
    "tools": {"fixtures": {}, "remote": [], "timeout": 20.0, "retries": 1},
    "detector": {"command": None},
    "mode": "plain",
    "label_map": "four_way",
    "clock": "wall",
    "prompts": None,
    "workers": min(os.cpu_count() or 1, MAX_DEFAULT_WORKERS),
}

# Subtrees taken whole rather than merged key by key.
_OPAQUE = {"backends", "tools.fixtures", "tools.remote", "label_map"}


def _flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, Mapping) and path not in _OPAQUE:
            out.update(_flatten(value, path + "."))
        else:
            out[path] = value
    return out


def _unflatten(flat: Mapping[str, Any]) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for path, value in flat.items():
        node = tree
        *parents, leaf = path.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = copy.deepcopy(value)
    return tree


@dataclass
class RunConfig:
    values: dict[str, Any]
    sources: dict[str, str]
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, path: str) -> Any:
        return self.values[path]

    @property
    def tree(self) -> dict[str, Any]:
        return _unflatten(self.values)

    @property
    def mode(self) -> Mode:
        return Mode(self.values["mode"])

    @property
    def workers(self) -> int:
        return int(self.values["workers"])

    def resolve_path(self, p: str | None) -> str | None:
        if p is None:
            return None
        path = Path(p)
        return str(path if path.is_absolute() else self.base_dir / path)

    def scoring(self) -> ScoringConfig:
        v = self.values
        return ScoringConfig(
            lambda_=float(v["scoring.lambda"]),
            theta={Subtask.TEXT: float(v["scoring.theta.text"]), Subtask.IMAGE: float(v["scoring.theta.image"])},
        )

    def search(self) -> SearchConfig:
        v = self.values
        return SearchConfig(
            budget={Subtask.TEXT: int(v["search.budget.text"]), Subtask.IMAGE: int(v["search.budget.image"])},
            exploration_constant=float(v["search.exploration_constant"]),
            rollout_depth=int(v["search.rollout_depth"]),
            scoring=self.scoring(),
            seed=int(v["search.seed"]),
        )

    def debate(self) -> DebateConfig:
        v = self.values
        return DebateConfig(
            rounds=int(v["debate.rounds"]),
            novelty_penalty=float(v["debate.novelty_penalty"]),
            judge_min_conf=float(v["debate.judge_min_conf"]),
            stop_on_consensus=bool(v["debate.stop_on_consensus"]),
        )

    def snapshot(self) -> dict[str, Any]:
        """Resolved tree as recorded in reports."""
        tree = self.tree
        tree.pop("workers", None)  # scheduling only; results do not depend on it
        return tree

    def violations(self) -> list[str]:
        return validate(self)

    def build_pipeline(self) -> Pipeline:
        errors = self.violations()
        if errors:
            raise ConfigError(errors)
        return Pipeline(
            agents=self.build_agents(),
            env=self.build_environment(),
            search=self.search(),
            debate=self.debate(),
            memory_bound=int(self.values["search.memory_bound"]),
        )

    def clock(self):
        clock_value = self.values["clock"]
        if clock_value == "wall":
            return utc_now
        frozen = _parse_instant(clock_value)
        return lambda: frozen

    def build_environment(self) -> Environment:
        fixtures = {k: self.resolve_path(p) for k, p in (self.values["tools.fixtures"] or {}).items()}
        registry = builtin_registry(fixtures)
        timeout = float(self.values["tools.timeout"])
        for entry in self.values["tools.remote"] or []:
            desc = ToolDescriptor(
                entry["name"],
                ModalityHint(entry.get("modality_hint", "both")),
                entry.get("description", entry["name"]),
                ToolKind.REMOTE_ENDPOINT,
            )
            registry = registry.register(desc, remote_tool_executor(desc.name, entry["url"], timeout))
        return Environment(
            registry,
            max_chars=int(self.values["search.max_observation_chars"]),
            clock=self.clock(),
            retries=int(self.values["tools.retries"]),
        )

    def build_agents(self) -> Agents:
        prompts = PromptSet.load(self.resolve_path(self.values["prompts"]))
        built: dict[str, Any] = {}
        cache: dict[str, Any] = {}
        for role, settings in self.values["backends"].items():
            key = repr(sorted(settings.items()))
            if key not in cache:
                cache[key] = self._backend(settings)
            built[role] = cache[key]
        return Agents(built, prompts)

    def _backend(self, settings: Mapping[str, Any]):
        kind = settings.get("kind")
        if kind == "scripted":
            script = settings.get("script")
            if not script:
                return ScriptedBackend.from_jsonl(DEFAULT_SCRIPT)
            return ScriptedBackend.from_jsonl(self.resolve_path(script))
        return RemoteBackend(
            settings["base_url"],
            settings["model"],
            api_key_env=settings.get("api_key_env", "OPENAI_API_KEY"),
            timeout=float(settings.get("timeout", 60.0)),
            temperature=float(settings.get("temperature", 0.0)),
            seed=settings.get("seed", self.values["search.seed"]),
        )


def _parse_instant(value: str) -> datetime:
    dt = datetime.fromisoformat(str(value))
    return dt if dt.tzinfo else dt.replace(tzinfo=timezone.utc)


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Resolve a configuration. ``overrides`` are dotted paths set from flags."""
    values = _flatten(DEFAULTS)
    sources = {k: "default" for k in values}
    base_dir = Path.cwd()
    unknown: list[str] = []
    if path is not None:
        path = Path(path)
        base_dir = path.resolve().parent
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        except yaml.YAMLError as exc:
            raise ConfigError([f"config {path} is not valid YAML: {exc}"]) from exc
        if not isinstance(data, Mapping):
            raise ConfigError([f"config {path} must be a mapping"])
        for key, value in _flatten(data).items():
            if key not in values:
                unknown.append(f"{key}: unknown setting")
                continue
            values[key] = value
            sources[key] = "file"
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        values[key] = value
        sources[key] = "flag"
    if unknown:
        raise ConfigError(unknown)
    return RunConfig(values, sources, base_dir)


def _number(values: Mapping[str, Any], key: str, kind: type, errors: list[str]) -> Any:
    raw = values[key]
    if isinstance(raw, bool) or not isinstance(raw, (int, float)) or (kind is int and not float(raw).is_integer()):
        errors.append(f"{key} = {raw!r} is not {'an integer' if kind is int else 'a number'}")
        return None
    return kind(raw)


def validate(cfg: RunConfig) -> list[str]:
    v = cfg.values
    errors: list[str] = []
    floats = [
        "scoring.lambda", "scoring.theta.text", "scoring.theta.image", "search.exploration_constant",
        "debate.novelty_penalty", "debate.judge_min_conf", "tools.timeout",
    ]
    ints = [
        "search.budget.text", "search.budget.image", "search.rollout_depth", "search.seed",
        "search.memory_bound", "search.max_observation_chars", "debate.rounds", "tools.retries", "workers",
    ]
    bad = [k for k in floats if _number(v, k, float, errors) is None]
    bad += [k for k in ints if _number(v, k, int, errors) is None]
    if not isinstance(v["debate.stop_on_consensus"], bool):
        errors.append(f"debate.stop_on_consensus = {v['debate.stop_on_consensus']!r} is not a boolean")
        bad.append("debate.stop_on_consensus")
    if not bad:
        errors += cfg.search().violations()
        errors += cfg.debate().violations()
        if v["search.memory_bound"] < 1:
            errors.append(f"search.memory_bound = {v['search.memory_bound']} < 1")
        if v["search.max_observation_chars"] < 1:
            errors.append(f"search.max_observation_chars = {v['search.max_observation_chars']} < 1")
        if v["tools.timeout"] <= 0:
            errors.append(f"tools.timeout = {v['tools.timeout']} ≤ 0")
        if v["tools.retries"] < 0:
            errors.append(f"tools.retries = {v['tools.retries']} < 0")
        if v["workers"] < 1:
            errors.append(f"workers = {v['workers']} < 1")

    if v["mode"] not in {m.value for m in Mode}:
        errors.append(f"mode = {v['mode']!r} ∉ {{plain, hybrid}}")

    lm = v["label_map"]
    if isinstance(lm, str):
        if lm not in LABEL_MAPS:
            errors.append(f"label_map = {lm!r} is not one of {sorted(LABEL_MAPS)}")
    elif not isinstance(lm, Mapping):
        errors.append("label_map must be a preset name or a mapping")

    if v["clock"] != "wall":
        try:
            _parse_instant(v["clock"])
        except (TypeError, ValueError):
            errors.append(f"clock = {v['clock']!r} is neither 'wall' nor an ISO-8601 instant")

    backends = v["backends"]
    if not isinstance(backends, Mapping) or not backends:
        errors.append("backends must map roles to backend settings")
    else:
        roles = {r.value for r in AgentRole} | {"default"}
        for role, settings in backends.items():
            where = f"backends.{role}"
            if role not in roles:
                errors.append(f"{where}: unknown role")
                continue
            if not isinstance(settings, Mapping):
                errors.append(f"{where} must be a mapping")
                continue
            kind = settings.get("kind")
            if kind == "scripted":
                script = settings.get("script")
                if script and not os.path.exists(cfg.resolve_path(script)):
                    errors.append(f"{where}.script = {script!r} does not exist")
            elif kind == "remote":
                for req in ("base_url", "model"):
                    if not settings.get(req):
                        errors.append(f"{where}.{req} is required for remote backends")
            else:
                errors.append(f"{where}.kind = {kind!r} ∉ {{scripted, remote}}")
        if "default" not in backends and not {r.value for r in AgentRole} <= set(backends):
            errors.append("backends: set 'default' or every role")

    fixtures = v["tools.fixtures"] or {}
    builtin = {d.name for d in BUILTIN_TOOLS}
    if not isinstance(fixtures, Mapping):
        errors.append("tools.fixtures must map tool names to JSONL paths")
    else:
        for name, p in fixtures.items():
            if name not in builtin:
                errors.append(f"tools.fixtures.{name}: no builtin tool of that name")
            elif not os.path.exists(cfg.resolve_path(p)):
                errors.append(f"tools.fixtures.{name} = {p!r} does not exist")
    remote = v["tools.remote"] or []
    if not isinstance(remote, list):
        errors.append("tools.remote must be a list")
    else:
        for i, entry in enumerate(remote):
            if not isinstance(entry, Mapping) or not entry.get("name") or not entry.get("url"):
                errors.append(f"tools.remote[{i}] needs 'name' and 'url'")
            elif entry["name"] in builtin:
                errors.append(f"tools.remote[{i}].name = {entry['name']!r} clashes with a builtin tool")
    if v["prompts"] is not None and not os.path.exists(cfg.resolve_path(v["prompts"])):
        errors.append(f"prompts = {v['prompts']!r} does not exist")
    return errors


def describe(cfg: RunConfig) -> str:
    """One ``key = value  [source]`` line per resolved setting."""
    width = max(len(k) for k in cfg.values)
    lines = []
    for key in sorted(cfg.values):
        shown = yaml.safe_dump(cfg.values[key], default_flow_style=True).strip()
        if shown.endswith("..."):  # scalar documents carry an end marker
            shown = shown[:-3].strip()
        lines.append(f"{key:<{width}} = {shown}  [{cfg.sources[key]}]")
    return "\n".join(lines)
