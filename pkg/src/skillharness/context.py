"""Context assembly, token budgeting, and asset-preserving history compression.

Histories are immutable lists of :class:`Message`. Compression replaces the
old prefix with one system message holding a structured summary plus a
serialized asset index; the asset index grammar is regular so every asset
survives re-extraction after any number of compressions.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .errors import CompressionFailed, ProviderError
from .skills import Skill

ROLES = ("system", "user", "assistant", "tool")

SKILL_LOADER_TOOL = "skill_loader"
SKILL_LOAD_CALL_ID = "skill_load"

ASSET_KINDS = ("skill_reference", "external_url", "image_reference", "key_data")

# Nine fixed summary section headings; tests assert this exact contract.
SUMMARY_HEADINGS = (
    "Session Intent",
    "Key Facts & Data",
    "Decisions Made",
    "Actions Taken",
    "Tool & Skill Usage",
    "Open Tasks",
    "User Preferences Observed",
    "Errors & Corrections",
    "Asset References",
)

# Extraction grammars, bit-exact by design:
#   serialized asset line (written by compression, re-extracted afterwards)
_ASSET_LINE_RE = re.compile(
    r"^- (skill_reference|external_url|image_reference|key_data): (.+?) \(turn (\d+)\)$",
    re.MULTILINE,
)
#   scheme-prefixed URL; trailing sentence punctuation is stripped
_URL_RE = re.compile(r"https?://[^\s)\]>\"']+")
#   Markdown image syntax; the target becomes an image_reference
_MD_IMAGE_RE = re.compile(r"!\[[^\]]*\]\(([^)\s]+)\)")
#   bare tokens with an image extension
_IMAGE_PATH_RE = re.compile(r"[^\s()\[\]>\"']+\.(?:png|jpe?g|gif|webp|svg)\b")
#   tool results tagged as data-bearing by the emitting tool
_KEY_DATA_RE = re.compile(r"^\[key-data\] (.+)$", re.MULTILINE)

_TRAILING_PUNCT = ".,;:!?"


@dataclass(frozen=True)
class ToolCall:
    call_id: str
    tool_name: str
    arguments: str  # JSON text


@dataclass(frozen=True)
class Message:
    """One history entry. ``turn_index`` is a strictly increasing sequence
    number over the session (one per message)."""

    role: str
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: str | None = None
    turn_index: int = 0

    def to_dict(self) -> dict:
        data: dict = {"role": self.role, "content": self.content, "turn_index": self.turn_index}
        if self.tool_calls:
            data["tool_calls"] = [
                {"call_id": c.call_id, "tool_name": c.tool_name, "arguments": c.arguments}
                for c in self.tool_calls
            ]
        if self.tool_call_id is not None:
            data["tool_call_id"] = self.tool_call_id
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Message":
        return cls(
            role=data["role"],
            content=data.get("content", ""),
            tool_calls=tuple(
                ToolCall(c["call_id"], c["tool_name"], c["arguments"])
                for c in data.get("tool_calls", [])
            ),
            tool_call_id=data.get("tool_call_id"),
            turn_index=data.get("turn_index", 0),
        )


@dataclass(frozen=True)
class Asset:
    """Structured reference preserved verbatim across compression."""

    kind: str
    value: str
    source_turn: int


@dataclass(frozen=True)
class ContextBudget:
    max_tokens: int = 64000
    retain_recent: int = 10

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.retain_recent < 1:
            raise ValueError("retain_recent must be >= 1")


@dataclass(frozen=True)
class CompressionState:
    level: int = 0
    summary: str | None = None
    asset_index: tuple[Asset, ...] = ()
    retained_from: int = 0


# -- token estimation ------------------------------------------------------

def estimate_text_tokens(text: str) -> int:
    return (len(text) + 3) // 4


def _message_chars(message: Message) -> int:
    chars = len(message.content)
    for call in message.tool_calls:
        chars += len(call.tool_name) + len(call.arguments)
    if message.tool_call_id:
        chars += len(message.tool_call_id)
    return chars


def estimate_message_tokens(message: Message) -> int:
    # ceil(chars / 4) plus a fixed 4-token per-message overhead; applied
    # per message so estimates are additive over history concatenation.
    return (_message_chars(message) + 3) // 4 + 4


TokenEstimator = Callable[[Message], int]


def estimate_tokens(
    history_or_text: str | Message | Iterable[Message],
    estimator: TokenEstimator = estimate_message_tokens,
) -> int:
    if isinstance(history_or_text, str):
        return estimate_text_tokens(history_or_text)
    if isinstance(history_or_text, Message):
        return estimator(history_or_text)
    return sum(estimator(m) for m in history_or_text)


def should_compress(
    history: Sequence[Message],
    budget: ContextBudget,
    estimator: TokenEstimator = estimate_message_tokens,
) -> bool:
    """True iff the history estimate strictly exceeds the budget."""
    return estimate_tokens(history, estimator) > budget.max_tokens


# -- skill injection and instructions --------------------------------------

def _next_skill_load_id(history: Sequence[Message]) -> str:
    count = sum(
        1
        for message in history
        for call in message.tool_calls
        if call.tool_name == SKILL_LOADER_TOOL
    )
    return SKILL_LOAD_CALL_ID if count == 0 else f"{SKILL_LOAD_CALL_ID}_{count + 1}"


def format_skill_content(skill: Skill) -> str:
    """Skill payload injected as a tool result: description, instructions,
    and the reference listing (names only; bodies stay lazy)."""
    parts = [f"Skill: {skill.name}", skill.desc]
    if skill.instr:
        parts.append("")
        parts.append(skill.instr)
    if skill.refs:
        parts.append("")
        parts.append("References (load on demand):")
        for ref_name in sorted(skill.refs):
            parts.append(f"- {ref_name}: {skill.refs[ref_name]}")
    return "\n".join(parts)


def inject_skill(history: Sequence[Message], skill: Skill) -> list[Message]:
    """Append the synthetic skill_loader call pair; input list is unchanged."""
    call_id = _next_skill_load_id(history)
    base = history[-1].turn_index + 1 if history else 0
    call = ToolCall(
        call_id=call_id,
        tool_name=SKILL_LOADER_TOOL,
        arguments=json.dumps({"skill": skill.name}),
    )
    assistant = Message(role="assistant", tool_calls=(call,), turn_index=base)
    tool = Message(
        role="tool",
        content=format_skill_content(skill),
        tool_call_id=call_id,
        turn_index=base + 1,
    )
    return list(history) + [assistant, tool]


RESPONSE_GUIDANCE = (
    "After completing each task, append 1-2 brief guiding suggestions "
    "for what the user could do or provide next."
)


def build_instructions(workspace, skill: Skill | None) -> str:
    """Concatenate the three memory layers, the active skill summary, and
    the standing response-guidance directive, in fixed labeled order.

    ``workspace`` is any object exposing ``soul()``, ``user_profile()``
    and ``memory()`` readers.
    """
    sections = [
        "# Agent Charter (SOUL)",
        workspace.soul().strip(),
        "",
        "# User Profile (USER)",
        workspace.user_profile().strip(),
        "",
        "# Long-Term Memory (MEMORY)",
        workspace.memory().strip(),
        "",
    ]
    if skill is not None:
        sections += ["# Active Skill", f"{skill.name}: {skill.desc}", ""]
    sections += ["# Response Guidance", RESPONSE_GUIDANCE]
    return "\n".join(sections)


# -- asset index -----------------------------------------------------------

def _strip_trailing_punct(value: str) -> str:
    return value.rstrip(_TRAILING_PUNCT)


def extract_asset_index(history: Iterable[Message]) -> list[Asset]:
    """Scan every message for structured assets, deduplicated by
    (kind, value) in first-occurrence order."""
    assets: list[Asset] = []
    seen: set[tuple[str, str]] = set()

    def add(kind: str, value: str, source_turn: int) -> None:
        if not value:
            return
        key = (kind, value)
        if key in seen:
            return
        seen.add(key)
        assets.append(Asset(kind=kind, value=value, source_turn=source_turn))

    for message in history:
        # serialized asset lines from earlier compressions keep their
        # original source turn
        for match in _ASSET_LINE_RE.finditer(message.content):
            add(match.group(1), match.group(2), int(match.group(3)))
        for call in message.tool_calls:
            if call.tool_name == SKILL_LOADER_TOOL:
                try:
                    value = json.loads(call.arguments).get("skill", call.arguments)
                except (json.JSONDecodeError, AttributeError):
                    value = call.arguments
                add("skill_reference", str(value), message.turn_index)
        image_values: set[str] = set()
        for match in _MD_IMAGE_RE.finditer(message.content):
            image_values.add(match.group(1))
        for match in _IMAGE_PATH_RE.finditer(message.content):
            image_values.add(match.group(0))
        for value in sorted(image_values):
            add("image_reference", value, message.turn_index)
        for match in _URL_RE.finditer(message.content):
            value = _strip_trailing_punct(match.group(0))
            # an image target that happens to be a URL stays an image_reference
            if value in image_values:
                continue
            add("external_url", value, message.turn_index)
        if message.role == "tool":
            for match in _KEY_DATA_RE.finditer(message.content):
                add("key_data", match.group(1).strip(), message.turn_index)
    return assets


def render_asset_index(assets: Sequence[Asset]) -> str:
    return "\n".join(f"- {a.kind}: {a.value} (turn {a.source_turn})" for a in assets)


# -- compression -----------------------------------------------------------

_SUMMARY_PROMPT = (
    "Summarize the conversation below into a structured digest. Respond in "
    "Markdown with exactly these nine second-level sections, in this order:\n"
    + "\n".join(f"## {heading}" for heading in SUMMARY_HEADINGS)
    + "\nBe concise and factual; write '(none)' for empty sections."
)


def _render_history_for_summary(history: Sequence[Message]) -> str:
    lines = []
    for message in history:
        body = message.content
        if message.tool_calls:
            calls = ", ".join(f"{c.tool_name}({c.arguments})" for c in message.tool_calls)
            body = f"{body} [tool calls: {calls}]".strip()
        lines.append(f"[{message.turn_index}] {message.role}: {body}")
    return "\n".join(lines)


def _split_summary_sections(text: str) -> tuple[str, dict[str, str]]:
    """Split provider prose into (preamble, heading -> body)."""
    sections: dict[str, str] = {}
    current: str | None = None
    preamble: list[str] = []
    bodies: dict[str, list[str]] = {}
    for line in text.split("\n"):
        if line.startswith("## "):
            current = line[3:].strip()
            bodies.setdefault(current, [])
            continue
        if current is None:
            preamble.append(line)
        else:
            bodies[current].append(line)
    for heading, lines in bodies.items():
        sections[heading] = "\n".join(lines).strip()
    return "\n".join(preamble).strip(), sections


def normalize_summary(provider_text: str, assets: Sequence[Asset], level: int) -> str:
    """Force the provider's prose into the nine-section contract and append
    the serialized asset index under Asset References."""
    preamble, sections = _split_summary_sections(provider_text)
    stray = [body for heading, body in sections.items() if heading not in SUMMARY_HEADINGS and body]
    intent_extra = "\n".join(part for part in [preamble] + stray if part)
    lines = [f"[conversation summary: compression level {level}]"]
    for heading in SUMMARY_HEADINGS:
        body = sections.get(heading, "")
        if heading == "Session Intent" and intent_extra:
            body = "\n".join(part for part in [body, intent_extra] if part)
        if heading == "Asset References":
            rendered = render_asset_index(assets)
            body = "\n".join(part for part in [body, rendered] if part)
        lines.append(f"## {heading}")
        lines.append(body if body else "(none)")
    return "\n".join(lines)


def compress_history(
    history: Sequence[Message],
    budget: ContextBudget,
    chat_provider,
    state: CompressionState | None = None,
    estimator: TokenEstimator = estimate_message_tokens,
) -> tuple[list[Message], CompressionState]:
    """Replace everything but the last ``retain_recent`` messages with one
    system message holding the 9-section summary plus the asset index.

    All-or-nothing: any failure raises :class:`CompressionFailed` and the
    caller's history is untouched (inputs are never mutated).
    """
    state = state or CompressionState()
    if len(history) <= budget.retain_recent:
        raise CompressionFailed(
            f"history has {len(history)} messages; retain_recent={budget.retain_recent} leaves nothing to compress"
        )
    pre_estimate = estimate_tokens(history, estimator)
    prefix = list(history[: -budget.retain_recent])
    tail = list(history[-budget.retain_recent :])

    merged: list[Asset] = []
    seen: set[tuple[str, str]] = set()
    for asset in list(state.asset_index) + extract_asset_index(prefix):
        key = (asset.kind, asset.value)
        if key not in seen:
            seen.add(key)
            merged.append(asset)

    prompt = [
        Message(role="system", content=_SUMMARY_PROMPT),
        Message(role="user", content=_render_history_for_summary(prefix), turn_index=1),
    ]
    try:
        reply = chat_provider.complete(prompt)
    except ProviderError as exc:
        raise CompressionFailed(f"summary provider failed: {exc}") from exc

    level = state.level + 1
    summary_doc = normalize_summary(reply.content, merged, level)
    summary_message = Message(
        role="system", content=summary_doc, turn_index=prefix[0].turn_index
    )
    new_history = [summary_message] + tail
    post_estimate = estimate_tokens(new_history, estimator)
    if post_estimate >= pre_estimate:
        raise CompressionFailed(
            f"summary did not shrink the history ({pre_estimate} -> {post_estimate} tokens)"
        )
    new_state = CompressionState(
        level=level,
        summary=summary_doc,
        asset_index=tuple(merged),
        retained_from=tail[0].turn_index,
    )
    return new_history, new_state
