"""Chat-completion wire handling: parse, extract tool calls, rewrite responses.

Supports the OpenAI-compatible shape on /v1/chat/completions and the
Ollama-style shape on /api/chat. Tool calls arrive either in the response's
structured tool-call array or as ``<tool_call>...</tool_call>`` XML fragments
embedded in message content; XML auto-detection runs regardless of the
configured runtime. All transformations operate on owned buffers and are safe
to call concurrently.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from typing import Any

from agentwarden.domain import (
    CallFormat,
    MalformedCallError,
    ToolCall,
    UNKNOWN_TOOL,
    WireFormat,
    normalize_tool_name,
)

# Exact notice injected in place of stripped tool calls. Byte-for-byte stable:
# runtimes and tests match on it verbatim.
BLOCK_MESSAGE = (
    "AgentWarden blocked this tool call. "
    "The requested operation is not permitted in this governed session."
)

TOOL_CALL_XML_RE = re.compile(r"<tool_call>(.*?)</tool_call>", re.DOTALL)


class WireError(ValueError):
    """Raised when a request or response body cannot be parsed."""


def _canonical_or_unknown(raw_name: str):
    try:
        return normalize_tool_name(raw_name)
    except MalformedCallError:
        return UNKNOWN_TOOL


def _arguments_text(payload: Any) -> str:
    """Verbatim for string payloads; canonical JSON for object payloads."""
    if isinstance(payload, str):
        return payload
    if payload is None:
        return ""
    return json.dumps(payload, ensure_ascii=False, sort_keys=True)


@dataclass
class _Message:
    """One assistant message location inside a parsed response document."""

    container: dict  # the JSON object holding "content" / "tool_calls"
    content: str
    structured: list[dict]  # raw tool-call entries, in array order


@dataclass
class ChatRequest:
    """A parsed chat-completion request. ``raw_body`` is the original bytes."""

    dialect: WireFormat
    messages: tuple[tuple[str, str], ...]  # (role, content)
    declared_tools: tuple[str, ...] | None
    session_id: str
    raw_body: bytes
    doc: dict = field(repr=False, default_factory=dict)

    @property
    def first_user_message(self) -> str:
        for role, content in self.messages:
            if role == "user":
                return content
        return ""

    def user_content(self) -> str:
        return "\n".join(c for r, c in self.messages if r == "user")


@dataclass
class ChatResponse:
    """A parsed chat-completion response.

    ``raw_body`` re-serializes unchanged when no rewrite is applied; rewrites
    produce a new document and leave the original untouched.
    """

    dialect: WireFormat
    raw_body: bytes
    doc: dict = field(repr=False)
    messages: list[_Message] = field(repr=False)

    @property
    def content(self) -> str:
        """Natural-language text of the response (all messages joined)."""
        return "\n".join(m.content for m in self.messages)

    @property
    def finish_info(self) -> dict:
        """Opaque passthrough of finish metadata, for logging only."""
        info: dict[str, Any] = {}
        if self.dialect is WireFormat.OPENAI:
            reasons = [c.get("finish_reason") for c in self.doc.get("choices", [])]
            info["finish_reason"] = reasons[0] if len(reasons) == 1 else reasons
        else:
            info["done"] = self.doc.get("done")
            if "done_reason" in self.doc:
                info["done_reason"] = self.doc["done_reason"]
        return info


def _message_text(content: Any) -> str:
    # Content may legitimately be null alongside tool calls.
    return content if isinstance(content, str) else ""


def parse_chat_request(body: bytes, dialect: WireFormat, session_id: str = "") -> ChatRequest:
    """Parse a chat-completion request body.

    Raises:
        WireError: malformed JSON or missing/invalid messages array.
    """
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise WireError(f"request body is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("messages"), list):
        raise WireError("request body has no messages array")
    messages = []
    for entry in doc["messages"]:
        if not isinstance(entry, dict):
            raise WireError("request message is not an object")
        messages.append((str(entry.get("role", "")), _message_text(entry.get("content"))))
    declared: tuple[str, ...] | None = None
    if isinstance(doc.get("tools"), list):
        names = []
        for tool in doc["tools"]:
            fn = tool.get("function", tool) if isinstance(tool, dict) else {}
            if isinstance(fn, dict) and fn.get("name"):
                names.append(str(fn["name"]))
        declared = tuple(names)
    return ChatRequest(
        dialect=dialect,
        messages=tuple(messages),
        declared_tools=declared,
        session_id=session_id,
        raw_body=body,
        doc=doc,
    )


def parse_chat_response(body: bytes, dialect: WireFormat) -> ChatResponse:
    """Parse a chat-completion response body.

    Raises:
        WireError: malformed JSON or a shape with no assistant message.
    """
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise WireError(f"response body is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise WireError("response body is not a JSON object")
    messages: list[_Message] = []
    if dialect is WireFormat.OPENAI:
        choices = doc.get("choices")
        if not isinstance(choices, list) or not choices:
            raise WireError("response has no choices")
        for choice in choices:
            msg = choice.get("message") if isinstance(choice, dict) else None
            if not isinstance(msg, dict):
                raise WireError("response choice has no message")
            messages.append(_make_message(msg))
    else:
        msg = doc.get("message")
        if not isinstance(msg, dict):
            raise WireError("response has no message")
        messages.append(_make_message(msg))
    return ChatResponse(dialect=dialect, raw_body=body, doc=doc, messages=messages)


def _make_message(msg: dict) -> _Message:
    structured = msg.get("tool_calls")
    if not isinstance(structured, list):
        structured = []
    return _Message(container=msg, content=_message_text(msg.get("content")), structured=structured)


def _structured_call(entry: dict, index: int) -> ToolCall:
    fn = entry.get("function", entry) if isinstance(entry, dict) else {}
    if not isinstance(fn, dict):
        fn = {}
    raw_name = str(fn.get("name", ""))
    return ToolCall(
        raw_name=raw_name,
        canonical=_canonical_or_unknown(raw_name),
        arguments=_arguments_text(fn.get("arguments")),
        dialect=CallFormat.STRUCTURED_JSON,
        index_in_response=index,
    )


def _xml_call(inner: str, index: int) -> ToolCall:
    """Parse one ``<tool_call>`` payload: a JSON object with name/arguments.

    Any other payload shape yields a parse-failure call carrying the
    unknown-tool marker and the raw payload text, so the suspicious path
    still sees the content. Fragments are never silently dropped.
    """
    try:
        payload = json.loads(inner)
    except json.JSONDecodeError:
        payload = None
    if isinstance(payload, dict) and payload.get("name"):
        raw_name = str(payload["name"])
        return ToolCall(
            raw_name=raw_name,
            canonical=_canonical_or_unknown(raw_name),
            arguments=_arguments_text(payload.get("arguments")),
            dialect=CallFormat.HERMES_XML,
            index_in_response=index,
        )
    return ToolCall(
        raw_name="",
        canonical=UNKNOWN_TOOL,
        arguments=inner,
        dialect=CallFormat.HERMES_XML,
        index_in_response=index,
    )


def extract_tool_calls(resp: ChatResponse) -> list[ToolCall]:
    """All governable calls in document order: structured first, then XML.

    Per message (per choice for multi-choice responses): entries of the
    structured tool-call array in array order, then ``<tool_call>`` fragments
    in content order. Never mutates ``resp``.
    """
    calls: list[ToolCall] = []
    for message in resp.messages:
        for entry in message.structured:
            calls.append(_structured_call(entry, len(calls)))
        for match in TOOL_CALL_XML_RE.finditer(message.content):
            calls.append(_xml_call(match.group(1), len(calls)))
    return calls


def is_pure_tool_call_response(resp: ChatResponse) -> bool:
    """True iff the response carries calls and no natural-language text.

    Content with every ``<tool_call>`` fragment removed must be whitespace
    only, and at least one call (structured or XML) must be present. Gates
    the semantic output filter.
    """
    any_calls = False
    for message in resp.messages:
        if message.structured:
            any_calls = True
        stripped, n = TOOL_CALL_XML_RE.subn("", message.content)
        if n:
            any_calls = True
        if stripped.strip():
            return False
    return any_calls


@dataclass(frozen=True)
class _CallSite:
    message_index: int
    kind: str  # "structured" | "xml"
    slot: int  # array position, or fragment ordinal within the message


def _call_sites(resp: ChatResponse) -> list[_CallSite]:
    sites: list[_CallSite] = []
    for mi, message in enumerate(resp.messages):
        for slot in range(len(message.structured)):
            sites.append(_CallSite(mi, "structured", slot))
        for slot in range(len(TOOL_CALL_XML_RE.findall(message.content))):
            sites.append(_CallSite(mi, "xml", slot))
    return sites


def _strip_xml_fragments(content: str, drop: set[int]) -> str:
    spans = [m.span() for m in TOOL_CALL_XML_RE.finditer(content)]
    for ordinal in sorted(drop, reverse=True):
        start, end = spans[ordinal]
        content = content[:start] + content[end:]
    return content


def _append_block_message(doc_messages: list[dict]) -> None:
    first = doc_messages[0]
    existing = _message_text(first.get("content"))
    if existing.strip():
        first["content"] = existing + "\n\n" + BLOCK_MESSAGE
    else:
        first["content"] = BLOCK_MESSAGE


def _reserialize(resp: ChatResponse, doc: dict) -> ChatResponse:
    body = json.dumps(doc, ensure_ascii=False).encode("utf-8")
    return parse_chat_response(body, resp.dialect)


def _message_containers(doc: dict, dialect: WireFormat) -> list[dict]:
    if dialect is WireFormat.OPENAI:
        return [c["message"] for c in doc["choices"]]
    return [doc["message"]]


def strip_all_calls(resp: ChatResponse, replace_content: bool = False) -> ChatResponse:
    """Fail-closed rewrite: drop every call; optionally replace all content.

    With ``replace_content`` the block message becomes the entire content
    (semantic-filter blocks); otherwise it is appended to remaining content.
    """
    doc = copy.deepcopy(resp.doc)
    containers = _message_containers(doc, resp.dialect)
    for container in containers:
        container.pop("tool_calls", None)
        if replace_content:
            container["content"] = ""
        else:
            container["content"] = TOOL_CALL_XML_RE.sub("", _message_text(container.get("content")))
    if replace_content:
        containers[0]["content"] = BLOCK_MESSAGE
    else:
        _append_block_message(containers)
    return _reserialize(resp, doc)


def rewrite_blocked(resp: ChatResponse, blocked: set[int]) -> ChatResponse:
    """Remove the blocked calls and append the block notice once.

    ``blocked`` indexes into ``extract_tool_calls(resp)``. Unblocked calls
    and every other byte of the document are preserved; with no blocked
    calls the response is returned unchanged (byte-identical pass-through).
    An out-of-range index is an internal invariant violation: the rewrite
    aborts fail-closed, stripping every call.
    """
    if not blocked:
        return resp
    sites = _call_sites(resp)
    if any(i < 0 or i >= len(sites) for i in blocked):
        return strip_all_calls(resp)

    doc = copy.deepcopy(resp.doc)
    containers = _message_containers(doc, resp.dialect)
    drop_structured: dict[int, set[int]] = {}
    drop_xml: dict[int, set[int]] = {}
    for i in blocked:
        site = sites[i]
        target = drop_structured if site.kind == "structured" else drop_xml
        target.setdefault(site.message_index, set()).add(site.slot)

    for mi, container in enumerate(containers):
        slots = drop_structured.get(mi)
        if slots:
            remaining = [
                entry
                for j, entry in enumerate(container.get("tool_calls", []))
                if j not in slots
            ]
            if remaining:
                container["tool_calls"] = remaining
            else:
                container.pop("tool_calls", None)
        fragments = drop_xml.get(mi)
        if fragments:
            container["content"] = _strip_xml_fragments(
                _message_text(container.get("content")), fragments
            )
    _append_block_message(containers)
    return _reserialize(resp, doc)


# ---------------------------------------------------------------------------
# Body builders (upstream stub, eval harness, tests)
# ---------------------------------------------------------------------------


def build_request_body(
    dialect: WireFormat,
    messages: list[tuple[str, str]],
    model: str = "stub-model",
    tools: list[str] | None = None,
) -> bytes:
    doc: dict[str, Any] = {
        "model": model,
        "messages": [{"role": r, "content": c} for r, c in messages],
    }
    if tools is not None:
        doc["tools"] = [
            {"type": "function", "function": {"name": name, "parameters": {}}}
            for name in tools
        ]
    if dialect is WireFormat.OLLAMA:
        doc["stream"] = False
    return json.dumps(doc, ensure_ascii=False).encode("utf-8")


def build_response_body(
    dialect: WireFormat,
    content: str,
    structured_calls: list[tuple[str, str]] | None = None,
    model: str = "stub-model",
) -> bytes:
    """Deterministic response body with the given content and structured calls.

    ``structured_calls`` entries are (tool name, argument text). XML calls are
    embedded by the caller directly in ``content``.
    """
    calls = structured_calls or []
    if dialect is WireFormat.OPENAI:
        tool_calls = [
            {
                "id": f"call_{i}",
                "type": "function",
                "function": {"name": name, "arguments": args},
            }
            for i, (name, args) in enumerate(calls)
        ]
        message: dict[str, Any] = {"role": "assistant", "content": content}
        if tool_calls:
            message["tool_calls"] = tool_calls
        doc: dict[str, Any] = {
            "id": "chatcmpl-stub",
            "object": "chat.completion",
            "created": 0,
            "model": model,
            "choices": [
                {
                    "index": 0,
                    "message": message,
                    "finish_reason": "tool_calls" if tool_calls else "stop",
                }
            ],
        }
    else:
        tool_calls = [
            {"function": {"name": name, "arguments": _decode_args(args)}}
            for name, args in calls
        ]
        message = {"role": "assistant", "content": content}
        if tool_calls:
            message["tool_calls"] = tool_calls
        doc = {
            "model": model,
            "created_at": "1970-01-01T00:00:00Z",
            "message": message,
            "done": True,
            "done_reason": "stop",
        }
    return json.dumps(doc, ensure_ascii=False).encode("utf-8")


def _decode_args(args: str) -> Any:
    # The Ollama shape carries arguments as an object when they are JSON.
    try:
        decoded = json.loads(args)
    except json.JSONDecodeError:
        return args
    return decoded if isinstance(decoded, dict) else args


def xml_call_fragment(name: str, arguments: Any) -> str:
    """Render one Hermes-style ``<tool_call>`` fragment."""
    payload = {"name": name, "arguments": arguments}
    return f"<tool_call>{json.dumps(payload, ensure_ascii=False)}</tool_call>"
