from mmverify.agents.backends import (
    DEBATE_ROLES,
    AgentRequest,
    AgentRole,
    Backend,
    RemoteBackend,
    ScriptedBackend,
)
from mmverify.agents.parsing import extract_json_object, parse_structured_reply
from mmverify.agents.roles import MAX_ATTEMPTS, Agents, AgentTurn, JudgeOutput, PromptSet

__all__ = [
    "DEBATE_ROLES",
    "MAX_ATTEMPTS",
    "AgentRequest",
    "AgentRole",
    "AgentTurn",
    "Agents",
    "Backend",
    "JudgeOutput",
    "PromptSet",
    "RemoteBackend",
    "ScriptedBackend",
    "extract_json_object",
    "parse_structured_reply",
]
