"""Deterministic rule set for the safety router's first stage.

Three check groups, evaluated in order with first-match-wins:
always-block tools, dangerous argument patterns, and prompt-injection
patterns (matched against the argument text and the surrounding user
content). The shipped pattern lists are a minimal core; deployments extend
them via config.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from agentwarden.domain import Tool

ALWAYS_BLOCK: frozenset[Tool] = frozenset({Tool.EXEC, Tool.SESSIONS_SPAWN, Tool.SUBAGENTS})


@dataclass(frozen=True)
class RulePattern:
    id: str
    regex: re.Pattern[str]

    def matches(self, text: str) -> bool:
        return bool(self.regex.search(text))


def _pattern(pattern_id: str, expr: str) -> RulePattern:
    return RulePattern(pattern_id, re.compile(expr, re.IGNORECASE))


# Dangerous argument shapes, scanned over the call's argument text.
DEFAULT_ARG_PATTERNS: tuple[RulePattern, ...] = (
    _pattern("rm_rf", r"\brm\s+-rf\b"),
    _pattern("file_scheme", r"file://"),
    _pattern("aws_metadata", r"(?:169\.254\.169\.254|/latest/meta-data)"),
    _pattern("ssh_creds", r"(?:\.ssh/|\bid_rsa\b)"),
)

# Injection shapes, scanned over the argument text and the user content.
DEFAULT_INJECTION_PATTERNS: tuple[RulePattern, ...] = (
    _pattern("ignore_previous", r"ignore\s+previous\s+instructions"),
    _pattern("dan_mode", r"\bdan\s+mode\b"),
)


@dataclass(frozen=True)
class RuleSet:
    """Immutable stage-1 rule set, shared across concurrent adjudications."""

    arg_patterns: tuple[RulePattern, ...] = DEFAULT_ARG_PATTERNS
    injection_patterns: tuple[RulePattern, ...] = DEFAULT_INJECTION_PATTERNS
    always_block: frozenset[Tool] = ALWAYS_BLOCK

    def __post_init__(self) -> None:
        if self.always_block != ALWAYS_BLOCK:
            raise ValueError("the always-block set is fixed")
        if not self.arg_patterns or not self.injection_patterns:
            raise ValueError("pattern lists must be non-empty")
        ids = [p.id for p in self.arg_patterns + self.injection_patterns]
        if len(ids) != len(set(ids)):
            raise ValueError("pattern ids must be unique")

    def with_extra(
        self,
        arg_patterns: list[tuple[str, str]] | None = None,
        injection_patterns: list[tuple[str, str]] | None = None,
    ) -> RuleSet:
        """Extend the shipped lists with (id, regex) pairs from config."""
        return RuleSet(
            arg_patterns=self.arg_patterns
            + tuple(_pattern(i, e) for i, e in (arg_patterns or [])),
            injection_patterns=self.injection_patterns
            + tuple(_pattern(i, e) for i, e in (injection_patterns or [])),
        )

    def matching_arg_pattern(self, arguments: str) -> RulePattern | None:
        for pattern in self.arg_patterns:
            if pattern.matches(arguments):
                return pattern
        return None

    def matching_injection_pattern(self, arguments: str, user_context: str) -> RulePattern | None:
        for pattern in self.injection_patterns:
            if pattern.matches(arguments) or pattern.matches(user_context):
                return pattern
        return None
