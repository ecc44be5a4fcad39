"""Canonical tool universe, shared value types, and the skill-economy metric.

Everything here is a pure value type or a pure function; instances are safe
to share across threads and sessions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum, IntEnum
from fractions import Fraction
from typing import Iterable


class MalformedCallError(ValueError):
    """Raised for tool calls that cannot be normalized (empty name)."""


class UndefinedSerError(ValueError):
    """Raised when SER is requested for an empty exposure mask."""


class Tool(IntEnum):
    """The fixed 17-tool universe. Indices are stable and total."""

    EXEC = 0
    SESSIONS_SPAWN = 1
    SUBAGENTS = 2
    READ = 3
    WRITE = 4
    EDIT = 5
    WEB_FETCH = 6
    WEB_SEARCH = 7
    MEMORY_SEARCH = 8
    MEMORY_GET = 9
    SESSIONS_SEND = 10
    PROCESS = 11
    SESSION_STATUS = 12
    # Inert placeholders filling out the 17-slot action space: never part of
    # any per-task minimum set and never always-blocked.
    BROWSER = 13
    CANVAS = 14
    CRON = 15
    TTS = 16

    @property
    def tool_name(self) -> str:
        return self.name.lower()


TOOL_COUNT = 17

_NAME_TO_TOOL: dict[str, Tool] = {t.tool_name: t for t in Tool}

# Runtime-specific names observed in the wild that map onto canonical tools.
# Applied for every dialect: `task` is a spawn verb and `execute` a shell verb
# in each runtime we govern.
TOOL_ALIASES: dict[str, str] = {
    "task": "sessions_spawn",
    "execute": "exec",
}


class UnknownTool(Enum):
    """Distinguished marker for tool names outside the universe.

    Calls carrying this marker are treated as suspicious: they are never on
    the classifier skip list and always reach Stage 2.
    """

    MARKER = "unknown_tool"


UNKNOWN_TOOL = UnknownTool.MARKER

Canonical = Tool | UnknownTool


def canonical_name(canonical: Canonical) -> str:
    """Render a canonical tool id (or the unknown marker) as its wire name."""
    if isinstance(canonical, Tool):
        return canonical.tool_name
    return canonical.value


class CallFormat(Enum):
    """How a tool call was emitted by the model."""

    STRUCTURED_JSON = "structured_json"
    HERMES_XML = "hermes_xml"


class WireFormat(Enum):
    """Chat-completion wire shape spoken on a proxied endpoint."""

    OLLAMA = "ollama"
    OPENAI = "openai"


def normalize_tool_name(raw: str, dialect: WireFormat | None = None) -> Canonical:
    """Map a raw tool name to its canonical id.

    Applies trimming, case-folding, and the alias table. Names outside the
    universe map to the unknown-tool marker rather than failing: the router
    treats those as suspicious. The alias table is dialect-independent.

    Raises:
        MalformedCallError: if ``raw`` is empty after trimming.
    """
    name = raw.strip().casefold()
    if not name:
        raise MalformedCallError("tool call has an empty name")
    name = TOOL_ALIASES.get(name, name)
    return _NAME_TO_TOOL.get(name, UNKNOWN_TOOL)


_FULL_BITS = (1 << TOOL_COUNT) - 1


@dataclass(frozen=True)
class ToolMask:
    """A 17-bit exposure mask indexed by tool id."""

    bits: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.bits <= _FULL_BITS:
            raise ValueError(f"mask out of range: {self.bits:#x}")

    @classmethod
    def none(cls) -> ToolMask:
        return cls(0)

    @classmethod
    def full(cls) -> ToolMask:
        return cls(_FULL_BITS)

    @classmethod
    def from_tools(cls, tools: Iterable[Tool]) -> ToolMask:
        bits = 0
        for tool in tools:
            bits |= 1 << tool
        return cls(bits)

    @classmethod
    def parse(cls, text: str) -> ToolMask:
        """Parse the 17-character 0/1 serialization (tool-index order)."""
        if len(text) != TOOL_COUNT or set(text) - {"0", "1"}:
            raise ValueError(f"not a {TOOL_COUNT}-bit mask string: {text!r}")
        bits = 0
        for i, ch in enumerate(text):
            if ch == "1":
                bits |= 1 << i
        return cls(bits)

    def serialize(self) -> str:
        """17-character string of 0/1, character i = bit of tool index i."""
        return "".join("1" if self.bits >> i & 1 else "0" for i in range(TOOL_COUNT))

    def __contains__(self, tool: Tool) -> bool:
        return bool(self.bits >> tool & 1)

    def popcount(self) -> int:
        return self.bits.bit_count()

    def tools(self) -> tuple[Tool, ...]:
        return tuple(t for t in Tool if t in self)

    def with_tool(self, tool: Tool, exposed: bool = True) -> ToolMask:
        if exposed:
            return ToolMask(self.bits | 1 << tool)
        return ToolMask(self.bits & ~(1 << tool) & _FULL_BITS)

    def union(self, other: ToolMask) -> ToolMask:
        return ToolMask(self.bits | other.bits)

    def intersect(self, other: ToolMask) -> ToolMask:
        return ToolMask(self.bits & other.bits)


def ser(exposed: ToolMask, invoked: Iterable[Tool]) -> Fraction:
    """Skill Economy Ratio: |invoked ∩ exposed| / |exposed|, exact.

    Invocations of unexposed tools are governance failures recorded
    elsewhere; they do not count toward the numerator.

    Raises:
        UndefinedSerError: if no tool is exposed (never silently 0).
    """
    n_exposed = exposed.popcount()
    if n_exposed == 0:
        raise UndefinedSerError("SER is undefined for an empty exposure mask")
    hits = len({t for t in invoked if t in exposed})
    return Fraction(hits, n_exposed)


class TaskType(Enum):
    """Coarse semantic label over a session's goal."""

    SUMMARISATION = "summarisation"
    FILE_READ = "file_read"
    WEB_RESEARCH = "web_research"
    CODE_EXECUTION = "code_execution"
    EMAIL = "email"
    UNKNOWN = "unknown"

    @property
    def index(self) -> int:
        return _TASK_INDEX[self]

    @property
    def label(self) -> str:
        """Human-readable label used in scoping artifacts."""
        return _TASK_LABELS[self]

    def one_hot(self) -> tuple[float, ...]:
        return tuple(1.0 if i == self.index else 0.0 for i in range(len(TaskType)))


_TASK_INDEX = {t: i for i, t in enumerate(TaskType)}

_TASK_LABELS = {
    TaskType.SUMMARISATION: "summarization",
    TaskType.FILE_READ: "file read",
    TaskType.WEB_RESEARCH: "web research",
    TaskType.CODE_EXECUTION: "code execution",
    TaskType.EMAIL: "email",
    TaskType.UNKNOWN: "unknown",
}


def task_from_name(name: str) -> TaskType:
    """Resolve a task-type name (either -ise or -ize spelling) to its enum."""
    key = name.strip().casefold().replace("-", "_").replace(" ", "_")
    if key == "summarization":
        key = "summarisation"
    for task in TaskType:
        if task.value == key:
            return task
    raise ValueError(f"unknown task type: {name!r}")


@dataclass(frozen=True, order=True)
class TrustLevel:
    """Per-tenant trust on the raw 0-5 scale."""

    raw: int

    def __post_init__(self) -> None:
        if not 0 <= self.raw <= 5:
            raise ValueError(f"trust level out of range: {self.raw}")

    @property
    def normalized(self) -> Fraction:
        """Exactly raw/5 (trust 4 -> 4/5)."""
        return Fraction(self.raw, 5)


@dataclass(frozen=True)
class ToolCall:
    """One model-emitted tool invocation, as extracted from a response.

    ``arguments`` is the verbatim argument payload when it arrived as text;
    object payloads are canonically re-serialized at extraction time.
    """

    raw_name: str
    canonical: Canonical
    arguments: str
    dialect: CallFormat
    index_in_response: int = 0

    def arguments_digest(self) -> str:
        """16-byte content hash of the argument text, hex-encoded."""
        return hashlib.blake2b(self.arguments.encode("utf-8"), digest_size=16).hexdigest()
