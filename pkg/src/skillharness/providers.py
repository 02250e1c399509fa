"""Chat and embedding providers behind one small interface.

Everything in the harness runs against either the deterministic mocks here
(no network, reproducible byte-for-byte) or an OpenAI-compatible HTTP
backend. Providers are duck-typed: a chat provider exposes
``complete(messages, tools=None) -> AssistantReply`` and an embedding
provider exposes ``embed(text) -> list[float]`` plus a ``dim`` attribute.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from .context import SUMMARY_HEADINGS, Message, ToolCall
from .errors import ProviderError


@dataclass(frozen=True)
class AssistantReply:
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()


class ChatProvider(Protocol):
    def complete(
        self, messages: Sequence[Message], tools: Sequence[object] | None = None
    ) -> AssistantReply: ...


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> list[float]: ...


# -- deterministic mocks ---------------------------------------------------

def _hash_words(seed: str, count: int) -> str:
    words = []
    digest = seed
    while len(words) < count:
        digest = hashlib.sha256(digest.encode()).hexdigest()
        words.extend(digest[i : i + 6] for i in range(0, len(digest), 6))
    return " ".join(words[:count])


class CannedChatProvider:
    """Offline stand-in for a chat model.

    Replies are a pure function of the request: summary requests get a
    nine-section digest skeleton, everything else gets deterministic filler
    of roughly ``reply_chars`` characters. Never emits tool calls.
    """

    def __init__(self, reply_chars: int = 600):
        self.reply_chars = reply_chars
        self.calls: list[list[Message]] = []

    def complete(
        self, messages: Sequence[Message], tools: Sequence[object] | None = None
    ) -> AssistantReply:
        self.calls.append(list(messages))
        system = messages[0].content if messages else ""
        if "structured digest" in system:
            lines = []
            for heading in SUMMARY_HEADINGS:
                lines.append(f"## {heading}")
                lines.append("(none)")
            return AssistantReply(content="\n".join(lines))
        last_user = next(
            (m.content for m in reversed(messages) if m.role == "user"), ""
        )
        head = f"Acknowledged: {last_user[:96]}"
        filler_words = max((self.reply_chars - len(head)) // 7, 0)
        body = _hash_words(last_user or "empty", filler_words)
        return AssistantReply(content=f"{head}\n{body}" if body else head)


class ScriptedChatProvider:
    """Consumes a fixed list of replies in order; exhaustion raises
    ProviderError so failure paths are exercised naturally."""

    def __init__(self, replies: Sequence[AssistantReply | str]):
        self._replies = [
            r if isinstance(r, AssistantReply) else AssistantReply(content=r)
            for r in replies
        ]
        self.calls: list[list[Message]] = []

    def complete(
        self, messages: Sequence[Message], tools: Sequence[object] | None = None
    ) -> AssistantReply:
        self.calls.append(list(messages))
        if not self._replies:
            raise ProviderError("scripted transcript exhausted")
        return self._replies.pop(0)


def load_transcript(path: Path) -> ScriptedChatProvider:
    """Build a scripted provider from a JSONL transcript file: one reply per
    line, ``{"content": ..., "tool_calls": [{call_id, tool_name, arguments}]}``."""
    replies: list[AssistantReply] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        calls = tuple(
            ToolCall(c["call_id"], c["tool_name"], c["arguments"])
            for c in data.get("tool_calls", [])
        )
        replies.append(AssistantReply(content=data.get("content", ""), tool_calls=calls))
    return ScriptedChatProvider(replies)


class HashEmbeddingProvider:
    """Deterministic unit vector derived from the SHA-256 of the text."""

    def __init__(self, dim: int = 8):
        self.dim = dim
        self.calls: list[str] = []

    def embed(self, text: str) -> list[float]:
        self.calls.append(text)
        raw = b""
        counter = 0
        while len(raw) < self.dim * 4:
            raw += hashlib.sha256(f"{counter}:{text}".encode()).digest()
            counter += 1
        components = []
        for i in range(self.dim):
            chunk = int.from_bytes(raw[i * 4 : i * 4 + 4], "big")
            components.append(chunk / 2**31 - 1.0)
        norm = sum(c * c for c in components) ** 0.5
        if norm == 0:
            components[0], norm = 1.0, 1.0
        return [c / norm for c in components]


class StaticEmbeddingProvider:
    """Maps exact texts to preset vectors; tests pick the geometry."""

    def __init__(self, vectors: dict[str, Sequence[float]], dim: int | None = None):
        self.vectors = {k: list(v) for k, v in vectors.items()}
        self.dim = dim if dim is not None else len(next(iter(self.vectors.values()), [1.0]))
        self.calls: list[str] = []

    def embed(self, text: str) -> list[float]:
        self.calls.append(text)
        try:
            return list(self.vectors[text])
        except KeyError:
            raise ProviderError(f"no static vector for {text!r}") from None


# -- OpenAI-compatible HTTP backend ----------------------------------------

def _wire_message(message: Message) -> dict:
    data: dict = {"role": message.role, "content": message.content}
    if message.tool_calls:
        data["tool_calls"] = [
            {
                "id": call.call_id,
                "type": "function",
                "function": {"name": call.tool_name, "arguments": call.arguments},
            }
            for call in message.tool_calls
        ]
    if message.tool_call_id is not None:
        data["tool_call_id"] = message.tool_call_id
    return data


def _wire_tools(tools: Sequence[object]) -> list[dict]:
    wired = []
    for tool in tools:
        properties = {}
        required = []
        for param in tool.parameter_schema:
            properties[param.name] = {"type": param.type, "description": param.description}
            if param.required:
                required.append(param.name)
        wired.append(
            {
                "type": "function",
                "function": {
                    "name": tool.name,
                    "description": tool.description,
                    "parameters": {
                        "type": "object",
                        "properties": properties,
                        "required": required,
                    },
                },
            }
        )
    return wired


def _api_key(env_var: str | None) -> str | None:
    # Credentials come only from the environment, never from config files.
    return os.environ.get(env_var) if env_var else None


class OpenAIChatProvider:
    """Chat completions against any OpenAI-compatible endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str | None = None,
        timeout: float = 120.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = _api_key(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(
        self, messages: Sequence[Message], tools: Sequence[object] | None = None
    ) -> AssistantReply:
        payload: dict = {
            "model": self.model,
            "messages": [_wire_message(m) for m in messages],
        }
        if tools:
            payload["tools"] = _wire_tools(tools)
        try:
            response = httpx.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers=self._headers(),
                timeout=self.timeout,
            )
            response.raise_for_status()
            choice = response.json()["choices"][0]["message"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"chat completion failed: {exc}") from exc
        calls = tuple(
            ToolCall(
                call_id=c["id"],
                tool_name=c["function"]["name"],
                arguments=c["function"]["arguments"],
            )
            for c in choice.get("tool_calls") or []
        )
        return AssistantReply(content=choice.get("content") or "", tool_calls=calls)


class OpenAIEmbeddingProvider:
    """Embeddings against any OpenAI-compatible endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key_env: str | None = None,
        timeout: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        self.api_key_env = api_key_env
        self.timeout = timeout

    def embed(self, text: str) -> list[float]:
        headers = {"Content-Type": "application/json"}
        key = _api_key(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            response = httpx.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": text},
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
            vector = response.json()["data"][0]["embedding"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"embedding failed: {exc}") from exc
        return [float(v) for v in vector]
