"""Safety router: adjudicate every extracted tool call before the runtime
can execute it.

Stage 1 applies the deterministic rule set, stage 2 consults the pluggable
classifier (with a skip list of known-safe tools), and the optional semantic
output stage inspects response text. Scope violations are enforced here as
well, independent of the governor's proactive scoping: defense in depth.
Rule sets and scope snapshots are immutable shared data, so adjudication is
safe to run concurrently across in-flight responses.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from agentwarden.audit import AuditRecord, WarningRecord, now_us
from agentwarden.classifiers import (
    ClassifierClient,
    Label,
    SemanticFilterClient,
)
from agentwarden.domain import Tool, ToolCall, canonical_name
from agentwarden.governor import CapabilityScope
from agentwarden.rules import RuleSet
from agentwarden.wire import (
    ChatRequest,
    ChatResponse,
    extract_tool_calls,
    is_pure_tool_call_response,
    rewrite_blocked,
    strip_all_calls,
)

# Known-safe tools: the classifier is never invoked for these.
SKIP_LIST: frozenset[Tool] = frozenset({Tool.READ, Tool.MEMORY_SEARCH, Tool.WEB_SEARCH})

RULE_SCOPE_VIOLATION = "scope_violation"
RULE_CLASSIFIER_UNAVAILABLE = "classifier_unavailable"
RULE_AUDIT_UNAVAILABLE = "audit_unavailable"
RULE_PARSE_FAILURE = "parse_failure"
RULE_SEMANTIC_FILTER_UNAVAILABLE = "semantic_filter_unavailable"


class Decision(Enum):
    ALLOW = "allow"
    BLOCK = "block"


class Stage(Enum):
    RULES = "rules"
    CLASSIFIER = "classifier"
    SEMANTIC = "semantic"
    PASS_THROUGH = "pass_through"


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    stage: Stage
    rule_id: str | None = None
    score: float | None = None
    latency_us: int = 0

    def __post_init__(self) -> None:
        if self.decision is Decision.BLOCK:
            if self.stage is Stage.PASS_THROUGH:
                raise ValueError("a block cannot come from the pass-through stage")
            if (self.rule_id is None) == (self.score is None):
                raise ValueError("a block carries exactly one of rule_id or score")


def _elapsed_us(start_ns: int) -> int:
    return max(0, (time.perf_counter_ns() - start_ns) // 1000)


def stage1(call: ToolCall, user_context: str, rules: RuleSet) -> Verdict | None:
    """Deterministic first stage. Returns a block verdict or falls through.

    Checks run in order: always-block tools, argument patterns, injection
    patterns (the latter also scan the surrounding user content); the first
    match wins and names the rule.
    """
    start = time.perf_counter_ns()
    if isinstance(call.canonical, Tool) and call.canonical in rules.always_block:
        return Verdict(
            Decision.BLOCK,
            Stage.RULES,
            rule_id=f"always_block_{call.canonical.tool_name}",
            latency_us=_elapsed_us(start),
        )
    pattern = rules.matching_arg_pattern(call.arguments)
    if pattern is not None:
        return Verdict(
            Decision.BLOCK, Stage.RULES, rule_id=pattern.id, latency_us=_elapsed_us(start)
        )
    pattern = rules.matching_injection_pattern(call.arguments, user_context)
    if pattern is not None:
        return Verdict(
            Decision.BLOCK, Stage.RULES, rule_id=pattern.id, latency_us=_elapsed_us(start)
        )
    return None


def stage2(call: ToolCall, context: str, client: ClassifierClient) -> Verdict:
    """Classifier stage. Skip-listed tools pass through without a backend
    call; unknown-tool markers always go to the classifier; backend failures
    block (fail closed) under a distinct rule id."""
    start = time.perf_counter_ns()
    if isinstance(call.canonical, Tool) and call.canonical in SKIP_LIST:
        return Verdict(Decision.ALLOW, Stage.PASS_THROUGH, latency_us=_elapsed_us(start))
    try:
        result = client.classify(call, context)
    except Exception:
        return Verdict(
            Decision.BLOCK,
            Stage.CLASSIFIER,
            rule_id=RULE_CLASSIFIER_UNAVAILABLE,
            latency_us=_elapsed_us(start),
        )
    decision = Decision.BLOCK if result.label is Label.BLOCK else Decision.ALLOW
    return Verdict(decision, Stage.CLASSIFIER, score=result.score, latency_us=_elapsed_us(start))


def stage3(
    resp: ChatResponse,
    filter_client: SemanticFilterClient | None,
    enabled: bool,
    on_warning: Callable[[str], None] | None = None,
) -> Verdict | None:
    """Semantic output stage (advisory, opt-in, default off).

    Skipped entirely for pure tool-call responses: structured output is not
    natural language. A filter failure yields no verdict, only a warning.
    """
    if not enabled or filter_client is None:
        return None
    if is_pure_tool_call_response(resp):
        return None
    start = time.perf_counter_ns()
    try:
        result = filter_client.check(resp.content)
    except Exception as exc:
        if on_warning is not None:
            on_warning(str(exc))
        return None
    if result.safe:
        return Verdict(Decision.ALLOW, Stage.SEMANTIC, latency_us=_elapsed_us(start))
    return Verdict(
        Decision.BLOCK,
        Stage.SEMANTIC,
        rule_id=result.category or "unsafe",
        latency_us=_elapsed_us(start),
    )


@dataclass
class RouterDeps:
    """Shared adjudication dependencies for one proxy/harness instance."""

    rules: RuleSet
    classifier: ClassifierClient
    semantic_filter: SemanticFilterClient | None = None
    semantic_enabled: bool = False
    audit_available: Callable[[], bool] = lambda: True


def _record(
    session_id: str,
    scope: CapabilityScope,
    verdict: Verdict,
    call: ToolCall | None,
) -> AuditRecord:
    return AuditRecord(
        timestamp=now_us(),
        session_id=session_id,
        task=scope.task.value,
        trust=scope.trust.raw,
        tool=canonical_name(call.canonical) if call is not None else None,
        arguments_digest=call.arguments_digest() if call is not None else None,
        decision=verdict.decision.value,
        stage=verdict.stage.value,
        rule_id=verdict.rule_id,
        score=verdict.score,
        scope_mask=scope.exposed.serialize(),
        latency_us=verdict.latency_us,
    )


def adjudicate_call(
    call: ToolCall,
    user_context: str,
    scope: CapabilityScope,
    deps: RouterDeps,
) -> Verdict:
    """Run one call through the pipeline; exactly one verdict results.

    Order: stage-1 rules, then the scope check (a call to a tool whose
    exposure bit is 0 blocks as a scope violation; unknown-tool markers have
    no bit and proceed to the classifier), then the audit-health gate, then
    stage 2.
    """
    verdict = stage1(call, user_context, deps.rules)
    if verdict is not None:
        return verdict
    if isinstance(call.canonical, Tool) and call.canonical not in scope.exposed:
        return Verdict(Decision.BLOCK, Stage.RULES, rule_id=RULE_SCOPE_VIOLATION)
    if not deps.audit_available():
        # Governance without audit refuses every Allow outside the skip list.
        if not (isinstance(call.canonical, Tool) and call.canonical in SKIP_LIST):
            return Verdict(Decision.BLOCK, Stage.RULES, rule_id=RULE_AUDIT_UNAVAILABLE)
    return stage2(call, user_context, deps.classifier)


def adjudicate(
    req: ChatRequest,
    resp: ChatResponse,
    scope: CapabilityScope,
    deps: RouterDeps,
) -> tuple[ChatResponse, list]:
    """Adjudicate a full upstream response.

    Returns the rewritten response plus one audit record per call verdict
    and one per semantic-stage verdict. A semantic block fails closed: all
    calls are stripped and the content is replaced with the block message.
    """
    user_context = req.user_content()
    calls = extract_tool_calls(resp)
    records: list = []
    blocked: set[int] = set()
    for i, call in enumerate(calls):
        verdict = adjudicate_call(call, user_context, scope, deps)
        records.append(_record(req.session_id, scope, verdict, call))
        if verdict.decision is Decision.BLOCK:
            blocked.add(i)

    warnings: list[str] = []
    semantic = stage3(
        resp, deps.semantic_filter, deps.semantic_enabled, on_warning=warnings.append
    )
    for detail in warnings:
        records.append(
            WarningRecord(
                timestamp=now_us(),
                session_id=req.session_id,
                rule_id=RULE_SEMANTIC_FILTER_UNAVAILABLE,
                detail=detail,
            )
        )
    if semantic is not None:
        records.append(_record(req.session_id, scope, semantic, None))
        if semantic.decision is Decision.BLOCK:
            return strip_all_calls(resp, replace_content=True), records

    return rewrite_blocked(resp, blocked), records
