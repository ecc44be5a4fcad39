"""Pluggable classifier and semantic-filter backends.

The reference implementations are deterministic pattern scorers so the full
pipeline is reproducible without a model server; HTTP clients speak the same
interfaces for real backends. All clients are safe for concurrent use (the
reference clients are pure; counters are lock-guarded).
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import httpx

from agentwarden.domain import ToolCall, canonical_name

DEFAULT_CLASSIFIER_TIMEOUT_S = 5.0


class Label(Enum):
    ALLOW = "allow"
    BLOCK = "block"


@dataclass(frozen=True)
class ClassifierResult:
    label: Label
    score: float


class ClassifierClient(Protocol):
    """Second-stage call classifier."""

    description: str

    def classify(self, call: ToolCall, context: str) -> ClassifierResult: ...


@dataclass(frozen=True)
class FilterResult:
    safe: bool
    category: str | None = None


class SemanticFilterClient(Protocol):
    """Response-text safety filter (semantic output stage)."""

    description: str

    def check(self, text: str) -> FilterResult: ...


# ---------------------------------------------------------------------------
# Reference heuristic classifier
# ---------------------------------------------------------------------------

# Cue lexicon over argument text. Weights sum and squash to score = s/(1+s);
# a call blocks at score >= 0.5, i.e. total weight >= 1.0.
_CLASSIFIER_CUES: tuple[tuple[str, re.Pattern[str], float], ...] = (
    ("netcat_listener", re.compile(r"\bnc(?:at)?\s+(?:-\w+\s+)*-l\b", re.I), 1.0),
    ("netcat_exec", re.compile(r"\bnc(?:at)?\s+(?:-\w+\s+)*-e\b", re.I), 1.0),
    ("dev_tcp_redirect", re.compile(r"/dev/tcp/", re.I), 1.0),
    ("remote_fetch_exec", re.compile(r"\b(?:curl|wget)\b[^|\n]{0,200}\|\s*(?:ba|z)?sh\b", re.I), 1.2),
    ("pipe_to_shell", re.compile(r"\|\s*(?:ba|z)?sh\b", re.I), 0.8),
    ("base64_decode_exec", re.compile(r"base64\s+(?:-d|--decode)\b.{0,200}\|\s*\S*(?:sh|python)", re.I | re.S), 1.0),
    ("python_socket_shell", re.compile(r"socket\.(?:socket|connect)\b.{0,400}(?:subprocess|pty\.spawn|os\.dup2)", re.I | re.S), 1.0),
    ("credential_path", re.compile(r"(?:\.aws/credentials|\.ssh/|\bid_rsa\b|/etc/shadow)", re.I), 0.8),
    ("passwd_read", re.compile(r"/etc/passwd", re.I), 0.6),
    ("shell_metachar_net", re.compile(r"[;&|]\s*(?:nc|ncat|telnet)\b", re.I), 1.0),
    ("chmod_exec", re.compile(r"\bchmod\s+\+x\b", re.I), 0.4),
)

BLOCK_SCORE_THRESHOLD = 0.5


class HeuristicClassifier:
    """Deterministic cue-lexicon classifier; the shipped stage-2 backend.

    Interface-compatible with a model-backed HTTP classifier. Tracks
    invocation counts per canonical tool name so skip-list soundness is
    directly observable.
    """

    description = "reference heuristic (cue lexicon over argument text)"

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.invocations: dict[str, int] = {}

    def classify(self, call: ToolCall, context: str) -> ClassifierResult:
        with self._lock:
            name = canonical_name(call.canonical)
            self.invocations[name] = self.invocations.get(name, 0) + 1
        weight = sum(w for _, pattern, w in _CLASSIFIER_CUES if pattern.search(call.arguments))
        score = weight / (1.0 + weight)
        label = Label.BLOCK if score >= BLOCK_SCORE_THRESHOLD else Label.ALLOW
        return ClassifierResult(label=label, score=score)

    def matched_cues(self, arguments: str) -> list[str]:
        return [cue_id for cue_id, pattern, _ in _CLASSIFIER_CUES if pattern.search(arguments)]


class HttpClassifier:
    """HTTP JSON classifier backend: POST {tool, arguments, context} -> {label, score}."""

    def __init__(self, url: str, timeout_s: float = DEFAULT_CLASSIFIER_TIMEOUT_S) -> None:
        self.url = url
        self.timeout_s = timeout_s
        self.description = f"http classifier at {url}"

    def classify(self, call: ToolCall, context: str) -> ClassifierResult:
        payload = {
            "tool": canonical_name(call.canonical),
            "arguments": call.arguments,
            "context": context,
        }
        resp = httpx.post(self.url, json=payload, timeout=self.timeout_s)
        resp.raise_for_status()
        doc = resp.json()
        label = Label.BLOCK if str(doc.get("label", "")).casefold() == "block" else Label.ALLOW
        return ClassifierResult(label=label, score=float(doc.get("score", 0.0)))


# ---------------------------------------------------------------------------
# Semantic output filter
# ---------------------------------------------------------------------------

# Category S14: shell/interpreter abuse shapes. Category S7: credential and
# secret exfiltration. First match wins.
_FILTER_RULES: tuple[tuple[str, re.Pattern[str]], ...] = (
    ("S14", re.compile(r"\bnc\s+-l\s+-p\s+\d+", re.I)),
    ("S14", re.compile(r"/dev/tcp/", re.I)),
    ("S14", re.compile(r"\bbash\s+-i\b", re.I)),
    ("S14", re.compile(r"socket\.socket\b.{0,400}\.(?:bind|listen)\(", re.I | re.S)),
    ("S14", re.compile(r"\bcurl\b.{0,200}/etc/passwd", re.I | re.S)),
    ("S14", re.compile(r"/etc/passwd.{0,200}\bcurl\b", re.I | re.S)),
    ("S7", re.compile(r"\.aws/credentials", re.I)),
    ("S7", re.compile(r"\baws_secret_access_key\b", re.I)),
    ("S7", re.compile(r"\baws_access_key_id\b", re.I)),
    ("S7", re.compile(r"169\.254\.169\.254/latest/meta-data", re.I)),
)


class PatternSemanticFilter:
    """Shipped semantic-filter stub: pattern classifier over the dangerous-text
    corpus categories (reverse/bind shells, password-file exfiltration,
    cloud-credential extraction). Model backends plug in over HTTP."""

    description = "pattern semantic filter (stub)"

    def check(self, text: str) -> FilterResult:
        for category, pattern in _FILTER_RULES:
            if pattern.search(text):
                return FilterResult(safe=False, category=category)
        return FilterResult(safe=True)


class HttpSemanticFilter:
    """HTTP JSON filter backend: POST {text, model} -> {safe, category}."""

    def __init__(self, url: str, model: str | None = None, timeout_s: float = DEFAULT_CLASSIFIER_TIMEOUT_S) -> None:
        self.url = url
        self.model = model
        self.timeout_s = timeout_s
        self.description = f"http semantic filter at {url}"

    def check(self, text: str) -> FilterResult:
        payload: dict[str, object] = {"text": text}
        if self.model:
            payload["model"] = self.model
        resp = httpx.post(self.url, json=payload, timeout=self.timeout_s)
        resp.raise_for_status()
        doc = resp.json()
        return FilterResult(safe=bool(doc.get("safe", False)), category=doc.get("category"))
