"""Model backends: a scripted table for offline runs and a chat-completion client."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx

from mmverify.errors import BackendError, ScriptMiss

logger = logging.getLogger(__name__)


class AgentRole(str, Enum):
    PLANNER = "planner"
    COHERENCE_GRADER = "coherence_grader"
    STANCE_GRADER = "stance_grader"
    SKEPTIC = "skeptic"
    SUPPORTER = "supporter"
    JUDGE = "judge"


DEBATE_ROLES = (AgentRole.SKEPTIC, AgentRole.SUPPORTER)


@dataclass(frozen=True)
class AgentRequest:
    role: AgentRole
    messages: tuple[Mapping[str, str], ...]
    keys: tuple[str, ...] = ()
    attempt: int = 0

    @property
    def prompt_text(self) -> str:
        return "\n".join(m["content"] for m in self.messages)


class Backend(Protocol):
    def complete(self, request: AgentRequest) -> str: ...


def _reply_text(reply: Any) -> str:
    return reply if isinstance(reply, str) else json.dumps(reply, sort_keys=True)


class ScriptedBackend:
    """Table-driven stand-in for every model role.

    Entries are ``{role, key, reply}`` or ``{role, contains, reply}``. A
    request is answered by the first exact key hit (trying the request's keys
    most-specific first), then the first ``contains`` rule whose substrings
    all occur in the prompt, then the role's ``"*"`` entry. A list-valued
    reply is indexed by retry attempt, its last element repeating.
    """

    def __init__(self, entries: Iterable[Mapping[str, Any]]):
        self._keyed: dict[tuple[str, str], Any] = {}
        self._rules: dict[str, list[tuple[tuple[str, ...], Any]]] = {}
        for n, entry in enumerate(entries, 1):
            try:
                role = AgentRole(entry["role"]).value
                reply = entry["reply"]
            except (KeyError, ValueError) as exc:
                raise ValueError(f"script entry {n}: {exc}") from exc
            if "contains" in entry:
                needles = entry["contains"]
                needles = (needles,) if isinstance(needles, str) else tuple(needles)
                self._rules.setdefault(role, []).append((needles, reply))
            else:
                self._keyed.setdefault((role, str(entry.get("key", "*"))), reply)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.loads(line) for line in fh if line.strip())

    def lookup(self, role: AgentRole, keys: Sequence[str], text: str) -> Any:
        role = AgentRole(role).value
        for key in keys:
            if (role, key) in self._keyed:
                return self._keyed[(role, key)]
        for needles, reply in self._rules.get(role, ()):
            if all(n in text for n in needles):
                return reply
        if (role, "*") in self._keyed:
            return self._keyed[(role, "*")]
        raise ScriptMiss(f"no scripted reply for role={role} keys={list(keys)}")

    def complete(self, request: AgentRequest) -> str:
        reply = self.lookup(request.role, request.keys, request.prompt_text)
        if isinstance(reply, list):
            if not reply:
                raise ScriptMiss(f"empty reply list for role={request.role.value}")
            reply = reply[min(request.attempt, len(reply) - 1)]
        return _reply_text(reply)


class RemoteBackend:
    """OpenAI-style ``/chat/completions`` client."""

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: str | None = "OPENAI_API_KEY",
        timeout: float = 60.0,
        temperature: float = 0.0,
        seed: int | None = None,
        client: httpx.Client | None = None,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.temperature = temperature
        self.seed = seed
        self.timeout = timeout
        headers = {}
        token = os.environ.get(api_key_env, "") if api_key_env else ""
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers

    def complete(self, request: AgentRequest) -> str:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [dict(m) for m in request.messages],
            "temperature": self.temperature,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        try:
            resp = self._client.post(self.url, json=body, headers=self._headers, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError(f"{request.role.value} call failed: {exc!r}") from exc
