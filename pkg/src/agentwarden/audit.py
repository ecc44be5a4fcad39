"""Append-only NDJSON audit store with a sidecar offset index.

Single serialized writer, any number of readers; records are immutable once
written and appends are fsynced before they are acknowledged (at-least-once
durability: a crash between append and ack may duplicate, never lose, an
acked record). Metrics are always recomputed from a full replay of the log,
so there is no hidden state to drift.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_EVEN
from fractions import Fraction
from typing import Any, Iterator

from agentwarden.domain import (
    TaskType,
    Tool,
    ToolMask,
    UndefinedSerError,
    ser,
)


class AuditUnavailable(RuntimeError):
    """The audit store cannot accept appends; governance must fail closed."""


@dataclass(frozen=True)
class AuditRecord:
    """One verdict event: a tool call (or response text) adjudicated."""

    timestamp: int  # UTC microseconds
    session_id: str
    task: str
    trust: int
    tool: str | None  # canonical name, the unknown marker, or None for response-level
    arguments_digest: str | None
    decision: str  # "allow" | "block"
    stage: str  # "rules" | "classifier" | "semantic" | "pass_through"
    rule_id: str | None
    score: float | None
    scope_mask: str
    latency_us: int

    def to_json(self) -> dict[str, Any]:
        return {"kind": "verdict", **self.__dict__}


@dataclass(frozen=True)
class ScopeRecord:
    """Session-start event: the scope a session was granted."""

    timestamp: int
    session_id: str
    task: str
    trust: int
    scope_mask: str
    source: str
    classifier_confidence: float

    def to_json(self) -> dict[str, Any]:
        return {"kind": "scope", **self.__dict__}


@dataclass(frozen=True)
class SessionEndRecord:
    """Terminal event for a session; carries the harness success signal."""

    timestamp: int
    session_id: str
    u_accuracy: int | None = None

    def to_json(self) -> dict[str, Any]:
        return {"kind": "session_end", **self.__dict__}


@dataclass(frozen=True)
class WarningRecord:
    """Advisory event (e.g. semantic filter unreachable)."""

    timestamp: int
    session_id: str
    rule_id: str
    detail: str = ""

    def to_json(self) -> dict[str, Any]:
        return {"kind": "warning", **self.__dict__}


Record = AuditRecord | ScopeRecord | SessionEndRecord | WarningRecord


def now_us() -> int:
    return time.time_ns() // 1000


class AuditStore:
    """Append-only store over one NDJSON file plus a ``.idx`` offset sidecar."""

    def __init__(self, path: str, fsync: bool = True) -> None:
        self.path = path
        self.index_path = path + ".idx"
        self._fsync = fsync
        self._lock = threading.Lock()
        self._failed = False
        self._session_ts: dict[str, int] = {}
        try:
            parent = os.path.dirname(os.path.abspath(path))
            os.makedirs(parent, exist_ok=True)
            self._fh = open(path, "ab")
            self._idx = open(self.index_path, "ab")
            self._seq = os.path.getsize(self.index_path) // 8
        except OSError as exc:
            raise AuditUnavailable(f"cannot open audit store at {path}: {exc}") from exc

    @property
    def available(self) -> bool:
        return not self._failed

    def append(self, record: Record) -> int:
        """Durably append one record; returns its strictly increasing sequence
        number (1-based).

        Raises:
            AuditUnavailable: on any IO failure. The store stays failed;
            callers must switch to fail-closed blocking.
        """
        with self._lock:
            if self._failed:
                raise AuditUnavailable("audit store previously failed")
            doc = record.to_json()
            # Timestamps are monotone per session even if the clock steps back.
            sid = doc.get("session_id", "")
            last = self._session_ts.get(sid, 0)
            if doc["timestamp"] < last:
                doc["timestamp"] = last
            try:
                offset = self._fh.tell()
                line = json.dumps(doc, ensure_ascii=False, sort_keys=True) + "\n"
                self._fh.write(line.encode("utf-8"))
                self._fh.flush()
                if self._fsync:
                    os.fsync(self._fh.fileno())
                self._idx.write(struct.pack("<Q", offset))
                self._idx.flush()
                if self._fsync:
                    os.fsync(self._idx.fileno())
            except OSError as exc:
                self._failed = True
                raise AuditUnavailable(f"audit append failed: {exc}") from exc
            self._session_ts[sid] = doc["timestamp"]
            self._seq += 1
            return self._seq

    def close(self) -> None:
        with self._lock:
            self._fh.close()
            self._idx.close()

    def __enter__(self) -> AuditStore:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    # -- read side ---------------------------------------------------------

    def iter_records(self) -> Iterator[dict]:
        yield from iter_log(self.path)

    def record_at(self, seq: int) -> dict:
        """Random access by sequence number via the offset sidecar."""
        with open(self.index_path, "rb") as idx:
            idx.seek((seq - 1) * 8)
            raw = idx.read(8)
        if len(raw) != 8:
            raise IndexError(f"no record with seq {seq}")
        (offset,) = struct.unpack("<Q", raw)
        with open(self.path, "rb") as fh:
            fh.seek(offset)
            return json.loads(fh.readline())

    def stats(self, **filters: Any) -> MetricsSummary:
        return compute_stats(self.iter_records(), **filters)

    def export_training_signals(
        self, since: int | None = None, until: int | None = None
    ) -> tuple[list[TrainingSignal], int]:
        return export_training_signals(self.iter_records(), since=since, until=until)


def iter_log(path: str) -> Iterator[dict]:
    if not os.path.exists(path):
        return
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _rate(numerator: int, denominator: int) -> str:
    """Exact rational rendered to 3 decimals."""
    if denominator == 0:
        return "0.000"
    value = Decimal(numerator) / Decimal(denominator)
    return str(value.quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


@dataclass
class MetricsSummary:
    intercepted_total: int = 0
    blocked_total: int = 0
    block_fraction: str = "0.000"
    per_tool: dict[str, dict[str, Any]] = field(default_factory=dict)
    per_task_mean_ser: dict[str, str] = field(default_factory=dict)
    mean_ser: str = "0.000"
    sessions: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "intercepted_total": self.intercepted_total,
            "blocked_total": self.blocked_total,
            "block_fraction": self.block_fraction,
            "per_tool": self.per_tool,
            "per_task_mean_ser": self.per_task_mean_ser,
            "mean_ser": self.mean_ser,
            "sessions": self.sessions,
        }

    def render_table(self) -> str:
        lines = [
            f"sessions            {self.sessions}",
            f"intercepted calls   {self.intercepted_total}",
            f"blocked calls       {self.blocked_total}",
            f"block fraction      {self.block_fraction}",
            f"mean SER            {self.mean_ser}",
            "",
            f"{'tool':<16}{'blocked':>8}{'total':>8}{'rate':>8}",
        ]
        for name, row in self.per_tool.items():
            lines.append(f"{name:<16}{row['blocked']:>8}{row['total']:>8}{row['rate']:>8}")
        if self.per_task_mean_ser:
            lines.append("")
            lines.append(f"{'task':<16}{'mean SER':>10}")
            for task, value in self.per_task_mean_ser.items():
                lines.append(f"{task:<16}{value:>10}")
        return "\n".join(lines)


def _in_range(record: dict, since: int | None, until: int | None) -> bool:
    ts = record.get("timestamp", 0)
    if since is not None and ts < since:
        return False
    if until is not None and ts > until:
        return False
    return True


def compute_stats(
    records: Iterator[dict] | list[dict],
    since: int | None = None,
    until: int | None = None,
    task: str | None = None,
    tool: str | None = None,
) -> MetricsSummary:
    """Per-tool block counts/rates and per-task mean SER over the log.

    Counts are exact integers; rates are exact rationals rendered to three
    decimals. An empty store yields all zeros.
    """
    per_tool_total: dict[str, int] = {}
    per_tool_blocked: dict[str, int] = {}
    sessions: dict[str, dict[str, Any]] = {}
    intercepted = 0
    blocked = 0

    for record in records:
        if not _in_range(record, since, until):
            continue
        kind = record.get("kind")
        sid = record.get("session_id", "")
        state = sessions.setdefault(sid, {"task": None, "mask": None, "allowed": set()})
        if kind == "scope":
            state["task"] = record.get("task")
            state["mask"] = record.get("scope_mask")
            continue
        if kind != "verdict":
            continue
        if task is not None and record.get("task") != task:
            continue
        name = record.get("tool")
        if tool is not None and name != tool:
            continue
        if state["task"] is None:
            state["task"] = record.get("task")
        if state["mask"] is None:
            state["mask"] = record.get("scope_mask")
        intercepted += 1
        is_block = record.get("decision") == "block"
        if is_block:
            blocked += 1
        if name is not None:
            per_tool_total[name] = per_tool_total.get(name, 0) + 1
            if is_block:
                per_tool_blocked[name] = per_tool_blocked.get(name, 0) + 1
            if not is_block:
                for member in Tool:
                    if member.tool_name == name:
                        state["allowed"].add(member)
                        break

    per_task_sers: dict[str, list[Fraction]] = {}
    all_sers: list[Fraction] = []
    session_count = 0
    for state in sessions.values():
        mask_text = state["mask"]
        if not mask_text:
            continue
        session_count += 1
        try:
            value = ser(ToolMask.parse(mask_text), state["allowed"])
        except (ValueError, UndefinedSerError):
            continue
        all_sers.append(value)
        per_task_sers.setdefault(state["task"] or TaskType.UNKNOWN.value, []).append(value)

    per_tool = {
        name: {
            "blocked": per_tool_blocked.get(name, 0),
            "total": total,
            "rate": _rate(per_tool_blocked.get(name, 0), total),
        }
        for name, total in sorted(per_tool_total.items())
    }
    mean = sum(all_sers, Fraction(0)) / len(all_sers) if all_sers else Fraction(0)
    per_task: dict[str, str] = {}
    for name, values in sorted(per_task_sers.items()):
        total = sum(values, Fraction(0)) / len(values)
        per_task[name] = _rate(total.numerator, total.denominator)

    return MetricsSummary(
        intercepted_total=intercepted,
        blocked_total=blocked,
        block_fraction=_rate(blocked, intercepted),
        per_tool=per_tool,
        per_task_mean_ser=per_task,
        mean_ser=_rate(mean.numerator, mean.denominator),
        sessions=session_count,
    )


# ---------------------------------------------------------------------------
# Training-signal export
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingSignal:
    """One session joined into the policy-training substrate."""

    task: str
    trust: int
    scope_mask: str
    block_count: int
    invoked: tuple[str, ...]
    u_accuracy: int | None  # None when no harness verdict was recorded


def export_training_signals(
    records: Iterator[dict] | list[dict],
    since: int | None = None,
    until: int | None = None,
) -> tuple[list[TrainingSignal], int]:
    """Join per-session records into training tuples.

    Sessions lacking a scope record are skipped; the skip count is returned
    alongside. Sessions need a terminal record to carry a success signal,
    otherwise u_accuracy is exported as unavailable (None).
    """
    sessions: dict[str, dict[str, Any]] = {}
    order: list[str] = []
    for record in records:
        if not _in_range(record, since, until):
            continue
        sid = record.get("session_id", "")
        if sid not in sessions:
            sessions[sid] = {
                "scope": None,
                "blocks": 0,
                "invoked": [],
                "u": None,
            }
            order.append(sid)
        state = sessions[sid]
        kind = record.get("kind")
        if kind == "scope":
            state["scope"] = record
        elif kind == "verdict":
            if record.get("decision") == "block":
                state["blocks"] += 1
            elif record.get("tool"):
                if record["tool"] not in state["invoked"]:
                    state["invoked"].append(record["tool"])
        elif kind == "session_end":
            state["u"] = record.get("u_accuracy")

    signals: list[TrainingSignal] = []
    skipped = 0
    for sid in order:
        state = sessions[sid]
        scope = state["scope"]
        if scope is None:
            skipped += 1
            continue
        signals.append(
            TrainingSignal(
                task=scope.get("task", TaskType.UNKNOWN.value),
                trust=int(scope.get("trust", 0)),
                scope_mask=scope.get("scope_mask", "0" * 17),
                block_count=state["blocks"],
                invoked=tuple(state["invoked"]),
                u_accuracy=state["u"],
            )
        )
    return signals, skipped
