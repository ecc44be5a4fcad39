"""Capability governor: task classification, per-task minimum tool sets,
session scoping, and the two scoping artifacts (AGENTS.md text, tools.deny).

Scoping is read-only over an immutable policy snapshot: concurrent sessions
may scope simultaneously, and policy reloads swap the snapshot atomically.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Protocol

import yaml

from agentwarden.domain import (
    TaskType,
    Tool,
    ToolMask,
    TrustLevel,
    task_from_name,
)

CONFIDENCE_THRESHOLD = 0.7

# Per-task minimum viable tool sets (task taxonomy defaults). Unknown gets a
# conservative read-only set.
TASK_TOOL_SETS: dict[TaskType, frozenset[Tool]] = {
    TaskType.SUMMARISATION: frozenset({Tool.READ, Tool.MEMORY_GET, Tool.WEB_SEARCH}),
    TaskType.FILE_READ: frozenset({Tool.READ, Tool.MEMORY_GET}),
    TaskType.WEB_RESEARCH: frozenset({Tool.WEB_SEARCH, Tool.WEB_FETCH, Tool.READ}),
    TaskType.CODE_EXECUTION: frozenset({Tool.READ, Tool.WRITE, Tool.EDIT}),
    TaskType.EMAIL: frozenset({Tool.READ, Tool.SESSIONS_SEND}),
    TaskType.UNKNOWN: frozenset({Tool.READ, Tool.WEB_SEARCH, Tool.MEMORY_GET}),
}


class ConfigError(ValueError):
    """Invalid governor/engine configuration; sessions are refused."""


def min_tool_set(task: TaskType) -> frozenset[Tool]:
    """Minimum viable tool set for a task type."""
    return TASK_TOOL_SETS[task]


# ---------------------------------------------------------------------------
# Task classification
# ---------------------------------------------------------------------------

# Weighted keyword cues per concrete task type. This is a deterministic
# stand-in behind the same interface, threshold, and Unknown fallback that a
# model-backed classifier would use.
_CUES: dict[TaskType, list[tuple[re.Pattern[str], float]]] = {
    TaskType.SUMMARISATION: [
        (re.compile(r"\bsummari[sz]e\b", re.I), 3.0),
        (re.compile(r"\bsummary\b", re.I), 2.5),
        (re.compile(r"\btl;?dr\b", re.I), 3.0),
        (re.compile(r"\bcondense\b", re.I), 2.5),
        (re.compile(r"\bbullet points?\b", re.I), 1.5),
        (re.compile(r"\bkey points?\b", re.I), 1.5),
        (re.compile(r"\bmain takeaways\b", re.I), 2.0),
    ],
    TaskType.FILE_READ: [
        (re.compile(r"\bread\s+(?:the\s+)?file\b", re.I), 3.0),
        (re.compile(r"\bcontents?\b", re.I), 1.5),
        (re.compile(r"\bwhat(?:'s| is) in (?:the )?file\b", re.I), 2.5),
        (re.compile(r"\bopen\b.{0,40}\.(?:md|txt|csv|json|log|cfg)\b", re.I), 2.5),
        (re.compile(r"\b(?:show|print|display)\b.{0,40}\bfile\b", re.I), 2.0),
        (re.compile(r"\bcat\s+\S+\.(?:md|txt|csv|json|log)\b", re.I), 2.5),
    ],
    TaskType.WEB_RESEARCH: [
        (re.compile(r"\bsearch\s+(?:the\s+)?(?:web|internet)\b", re.I), 3.0),
        (re.compile(r"https?://", re.I), 2.5),
        (re.compile(r"\bfetch\b", re.I), 2.0),
        (re.compile(r"\blook up\b", re.I), 2.0),
        (re.compile(r"\bresearch\b", re.I), 2.0),
        (re.compile(r"\bonline\b", re.I), 1.0),
        (re.compile(r"\bwebsite\b", re.I), 1.5),
        (re.compile(r"\brecent (?:news|developments)\b", re.I), 1.5),
    ],
    TaskType.CODE_EXECUTION: [
        (re.compile(r"\bwrite\b.{0,30}\b(?:script|program|function|class|module)\b", re.I), 3.0),
        (re.compile(r"\bimplement\b", re.I), 2.5),
        (re.compile(r"\brefactor\b", re.I), 3.0),
        (re.compile(r"\bfix (?:the )?bug\b", re.I), 2.5),
        (re.compile(r"\bcreate\b.{0,30}\b(?:script|function|cli|tool)\b", re.I), 2.5),
        (re.compile(r"\bunit tests?\b", re.I), 1.5),
        (re.compile(r"\bcode\b", re.I), 1.5),
        (re.compile(r"\.py\b", re.I), 1.0),
    ],
    TaskType.EMAIL: [
        (re.compile(r"\be-?mail\b", re.I), 3.0),
        (re.compile(r"\bsend\b.{0,25}\b(?:message|mail|reply|note)\b", re.I), 2.5),
        (re.compile(r"\bcompose\b", re.I), 2.0),
        (re.compile(r"\breply to\b", re.I), 2.0),
        (re.compile(r"\binbox\b", re.I), 2.0),
    ],
}


def classify_task(msg: str) -> tuple[TaskType, float]:
    """Classify a session's first user message into a task type.

    Deterministic weighted-cue scorer over the five concrete types;
    confidence is top-score / (top + runner-up), clamped to [0, 1]. Callers
    must treat confidence below ``CONFIDENCE_THRESHOLD`` as Unknown. Ties
    prefer the more restrictive type (smaller minimum tool set), then the
    lower task index: fail toward least privilege.
    """
    if not msg:
        raise ValueError("cannot classify an empty message")
    scores: dict[TaskType, float] = {}
    for task, cues in _CUES.items():
        scores[task] = sum(weight for pattern, weight in cues if pattern.search(msg))
    ranked = sorted(
        scores.items(),
        key=lambda kv: (-kv[1], len(min_tool_set(kv[0])), kv[0].index),
    )
    best_task, best = ranked[0]
    second = ranked[1][1]
    if best <= 0.0:
        return TaskType.UNKNOWN, 0.0
    confidence = min(1.0, best / (best + second))
    return best_task, confidence


# ---------------------------------------------------------------------------
# Scoping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskDescriptor:
    first_user_message: str
    trust: TrustLevel
    session_id: str

    def __post_init__(self) -> None:
        if not self.first_user_message:
            raise ValueError("task descriptor requires a non-empty first user message")


class ScopeSource:
    """Where a session's exposure mask came from."""

    LEARNED_POLICY = "learned_policy"
    YAML_FALLBACK = "yaml_fallback"


class MaskSelector(Protocol):
    """Policy-engine surface the governor scopes against."""

    def select_mask(self, task: TaskType, trust: TrustLevel) -> tuple[ToolMask, str]: ...


@dataclass(frozen=True)
class CapabilityScope:
    """The per-session exposure decision.

    Invariants hold for every source: spawn/subagent bits are never set, and
    the exec bit requires normalized trust >= 0.8.
    """

    task: TaskType
    trust: TrustLevel
    exposed: ToolMask
    source: str
    classifier_confidence: float

    def __post_init__(self) -> None:
        if Tool.SESSIONS_SPAWN in self.exposed or Tool.SUBAGENTS in self.exposed:
            raise ValueError("scope exposes a never-exposed tool")
        if Tool.EXEC in self.exposed and self.trust.normalized < Fraction(4, 5):
            raise ValueError("scope exposes exec below the trust threshold")


def scope_session(descriptor: TaskDescriptor, engine: MaskSelector) -> CapabilityScope:
    """Classify the session and compute its capability scope.

    The engine applies the hard constraints; scoping may be tighter than the
    task's minimum set (the router still enforces safety independently).

    Raises:
        ConfigError: the engine has neither a healthy policy nor a fallback
        (the session is refused, fail closed).
    """
    if engine is None:
        raise ConfigError("no policy engine configured; session refused")
    task, confidence = classify_task(descriptor.first_user_message)
    if confidence < CONFIDENCE_THRESHOLD:
        task = TaskType.UNKNOWN
    mask, source = engine.select_mask(task, descriptor.trust)
    return CapabilityScope(
        task=task,
        trust=descriptor.trust,
        exposed=mask,
        source=source,
        classifier_confidence=confidence,
    )


# ---------------------------------------------------------------------------
# Scoping artifacts
# ---------------------------------------------------------------------------


def render_agents_md(scope: CapabilityScope) -> str:
    """Deterministic AGENTS.md text announcing the governed scope."""
    names = [t.tool_name for t in scope.exposed.tools()]
    return (
        f"This is a governed session scoped to {scope.task.label}.\n"
        f"{len(names)} tools available: {', '.join(names)}.\n"
    )


def render_tools_deny(scope: CapabilityScope) -> str:
    """tools.deny config fragment: the exact complement of the exposure mask."""
    denied = [t.tool_name for t in Tool if t not in scope.exposed]
    return json.dumps({"tools": {"deny": denied}}, indent=2) + "\n"


# ---------------------------------------------------------------------------
# YAML fallback table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FallbackTable:
    """Static per-task exposure masks used when no healthy policy is loaded."""

    masks: Mapping[TaskType, ToolMask]
    min_trust_for_exec: int = 4

    @classmethod
    def default(cls) -> FallbackTable:
        return cls(
            masks={task: ToolMask.from_tools(tools) for task, tools in TASK_TOOL_SETS.items()}
        )

    def mask_for(self, task: TaskType) -> ToolMask:
        return self.masks[task]


def load_fallback_yaml(path: str) -> FallbackTable:
    """Load a fallback table from YAML.

    The file maps task-type names to lists of canonical tool names; tasks not
    listed keep their defaults. Unknown task or tool names are config errors.
    ``min_trust_for_exec`` (default 4) may only tighten the exec gate.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot load fallback file {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"fallback file {path} must be a mapping")

    min_trust = raw.pop("min_trust_for_exec", 4)
    if not isinstance(min_trust, int) or not 0 <= min_trust <= 5:
        raise ConfigError(f"min_trust_for_exec must be an integer in [0, 5], got {min_trust!r}")

    masks = {task: ToolMask.from_tools(tools) for task, tools in TASK_TOOL_SETS.items()}
    for task_name, tool_names in raw.items():
        try:
            task = task_from_name(str(task_name))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not isinstance(tool_names, list):
            raise ConfigError(f"fallback entry for {task_name!r} must be a list of tool names")
        tools = []
        for name in tool_names:
            key = str(name).strip().casefold()
            for tool in Tool:
                if tool.tool_name == key:
                    tools.append(tool)
                    break
            else:
                raise ConfigError(f"unknown tool name in fallback for {task_name!r}: {name!r}")
        masks[task] = ToolMask.from_tools(tools)
    return FallbackTable(masks=masks, min_trust_for_exec=min_trust)
