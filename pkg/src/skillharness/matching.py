"""Three-stage cascaded skill matching: keyword, embedding, then LLM intent.

Stages run in fixed order and the first success wins. Provider failures
degrade to no-match for that stage instead of failing the user's turn; the
outcome carries a ``degraded`` flag so callers can surface it.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .context import Message
from .errors import DimensionMismatch, ProviderError
from .skills import Skill, SkillStore

MATCH_KEYWORD = "keyword"
MATCH_EMBEDDING = "embedding"
MATCH_LLM = "llm"

LLM_MATCH_CONFIDENCE = 0.7
NO_MATCH_TOKEN = "NONE"

CACHE_FILENAME = ".embedding_cache.json"


@dataclass(frozen=True)
class MatchResult:
    skill_name: str
    match_type: str  # keyword | embedding | llm
    confidence: float

    def __post_init__(self) -> None:
        if self.match_type == MATCH_KEYWORD and self.confidence != 1.0:
            raise ValueError("keyword matches carry confidence 1.0")
        if self.match_type == MATCH_LLM and self.confidence != LLM_MATCH_CONFIDENCE:
            raise ValueError(f"llm matches carry confidence {LLM_MATCH_CONFIDENCE}")


@dataclass(frozen=True)
class MatchOutcome:
    """Result of the cascade plus whether any stage was skipped because a
    provider was unavailable."""

    result: MatchResult | None
    degraded: bool = False


@dataclass(frozen=True)
class MatcherConfig:
    theta: float = 0.6
    embedding_dim: int = 8
    word_boundary: bool = False  # off by default: triggers match as substrings

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must be in [0, 1]")


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """dot(a, b) / (|a| * |b|); zero-norm operands yield 0.0 by definition."""
    if len(a) != len(b) or len(a) == 0:
        raise DimensionMismatch(f"vector lengths {len(a)} and {len(b)}")
    dot = sum(x * y for x, y in zip(a, b))
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(y * y for y in b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return dot / (norm_a * norm_b)


def desc_digest(desc: str) -> str:
    return hashlib.sha256(desc.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Per-skill description vectors keyed by (skill_name, desc digest).

    Persisted as a sidecar JSON file beside the skill store so restarts do
    not re-embed unchanged skills. Reads are lock-free; writes serialize.
    """

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path and self.path.is_file():
            try:
                self._entries = json.loads(self.path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                self._entries = {}

    @classmethod
    def for_store(cls, store: SkillStore) -> "EmbeddingCache":
        return cls(store.root / CACHE_FILENAME)

    def get(self, skill_name: str, digest: str, dim: int) -> list[float] | None:
        entry = self._entries.get(skill_name)
        if not entry or entry.get("digest") != digest:
            return None
        vector = entry.get("vector", [])
        if len(vector) != dim:
            return None
        return list(vector)

    def put(self, skill_name: str, digest: str, vector: Sequence[float]) -> None:
        with self._lock:
            self._entries[skill_name] = {"digest": digest, "vector": list(vector)}
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                tmp = self.path.with_suffix(".tmp")
                tmp.write_text(json.dumps(self._entries), encoding="utf-8")
                tmp.replace(self.path)


# -- stage 1: keyword ------------------------------------------------------

def keyword_match(
    user_input: str, store: SkillStore, word_boundary: bool = False
) -> MatchResult | None:
    """Case-insensitive trigger containment; skills scanned in ascending
    name order, triggers in list order, first hit wins."""
    haystack = user_input.lower()
    for skill in store.skills():
        for trigger in skill.triggers:
            needle = trigger.lower()
            if word_boundary:
                hit = re.search(rf"\b{re.escape(needle)}\b", haystack) is not None
            else:
                hit = needle in haystack
            if hit:
                return MatchResult(
                    skill_name=skill.name, match_type=MATCH_KEYWORD, confidence=1.0
                )
    return None


# -- stage 2: embedding ----------------------------------------------------

def _skill_vector(skill: Skill, embed_provider, cache: EmbeddingCache | None) -> list[float]:
    digest = desc_digest(skill.desc)
    if cache is not None:
        cached = cache.get(skill.name, digest, embed_provider.dim)
        if cached is not None:
            return cached
    vector = embed_provider.embed(skill.desc)
    if cache is not None:
        cache.put(skill.name, digest, vector)
    return vector


def embedding_match(
    user_input: str,
    store: SkillStore,
    config: MatcherConfig,
    embed_provider,
    cache: EmbeddingCache | None = None,
) -> MatchOutcome:
    """Cosine argmax of the input against skill descriptions; accepted iff
    the best score is >= theta. Ties break to the earlier skill name."""
    if embed_provider is None:
        return MatchOutcome(result=None, degraded=True)
    try:
        input_vector = embed_provider.embed(user_input)
        best_name: str | None = None
        best_score = -2.0
        for skill in store.skills():
            score = cosine_similarity(input_vector, _skill_vector(skill, embed_provider, cache))
            if score > best_score:
                best_score = score
                best_name = skill.name
    except ProviderError:
        return MatchOutcome(result=None, degraded=True)
    if best_name is not None and best_score >= config.theta:
        return MatchOutcome(
            result=MatchResult(
                skill_name=best_name, match_type=MATCH_EMBEDDING, confidence=best_score
            )
        )
    return MatchOutcome(result=None)


# -- stage 3: LLM intent classification ------------------------------------

def build_intent_messages(user_input: str, skills: Sequence[Skill]) -> list[Message]:
    """Prompt contract for the intent stage; the oracle tests reuse it."""
    listing = "\n".join(f"- {skill.name}: {skill.desc}" for skill in skills)
    system = (
        "You route user requests to skills. Reply with exactly one skill name "
        f"from the list, or the single token {NO_MATCH_TOKEN} if none applies. "
        "Output nothing else."
    )
    user = f"Input: {user_input}\n\nSkills:\n{listing}"
    return [Message(role="system", content=system), Message(role="user", content=user, turn_index=1)]


def llm_match(user_input: str, store: SkillStore, chat_provider) -> MatchOutcome:
    """Ask the chat provider to name one skill; anything but an exact known
    name (after trimming) is treated as no match, never a guess."""
    if chat_provider is None:
        return MatchOutcome(result=None, degraded=True)
    try:
        reply = chat_provider.complete(build_intent_messages(user_input, store.skills()))
    except ProviderError:
        return MatchOutcome(result=None, degraded=True)
    answer = reply.content.strip()
    if answer in store:
        return MatchOutcome(
            result=MatchResult(
                skill_name=answer, match_type=MATCH_LLM, confidence=LLM_MATCH_CONFIDENCE
            )
        )
    return MatchOutcome(result=None)


# -- full cascade ----------------------------------------------------------

def match_skill(
    user_input: str,
    store: SkillStore,
    config: MatcherConfig,
    chat_provider=None,
    embed_provider=None,
    cache: EmbeddingCache | None = None,
) -> MatchOutcome:
    """Run keyword -> embedding -> llm, returning the first stage that
    succeeds. An empty store short-circuits without any provider call."""
    if not user_input:
        raise ValueError("user_input must be non-empty")
    if len(store) == 0:
        return MatchOutcome(result=None)
    keyword = keyword_match(user_input, store, word_boundary=config.word_boundary)
    if keyword is not None:
        return MatchOutcome(result=keyword)
    embedded = embedding_match(user_input, store, config, embed_provider, cache)
    if embedded.result is not None:
        return embedded
    llm = llm_match(user_input, store, chat_provider)
    return MatchOutcome(
        result=llm.result, degraded=embedded.degraded or llm.degraded
    )
