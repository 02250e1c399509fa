"""Offline evolution: post-session review, profile/memory deltas, skill
extraction with quality gating, behavior suggestions, and reward telemetry.

The review agent is an ordinary ReAct run whose only channel back into the
workspace is three collecting tools; its free text is logged but never
applied. Everything it proposes is validated here before any write:
profile fragments must quote the user, skill candidates pass the gate, and
behavior observations become suggestions only after repeating across
sessions and being explicitly confirmed.
"""

from __future__ import annotations

import json
import math
import uuid
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .context import Message
from .errors import SuggestionNotFound
from .matching import cosine_similarity
from .skills import (
    SLUG_RE,
    MaturityLevel,
    Skill,
    SkillMeta,
    SkillStore,
    classify_maturity,
    format_timestamp,
    utc_now,
)
from .tools import ToolDefinition, ToolEffect, ToolExecutionError, ToolParameter, ToolRegistry
from .workspace import (
    ProfileDelta,
    Provenance,
    SectionEdit,
    Workspace,
    apply_memory_delta,
    apply_profile_delta,
)

OBSERVATIONS_FILE = "observations.json"
SUGGESTIONS_FILE = "suggestions.json"
REWARDS_FILE = "rewards.json"

REVIEW_INSTRUCTIONS = (
    "You are an offline analyst reviewing a finished conversation between a "
    "user and their assistant. Extract profile and memory changes and "
    "reusable skills.\n"
    "Rules:\n"
    "- Call update_user_profile only for facts the user explicitly stated; "
    "pass the exact quote. For inferred behavior patterns set "
    "basis='observed' instead of quoting.\n"
    "- Call update_memory for durable facts, decisions, or preferences worth "
    "keeping long term.\n"
    "- Call extract_skill when a reusable multi-step procedure emerged; give "
    "it a lowercase hyphenated name, a one-line description, trigger "
    "keywords, and step-by-step instructions.\n"
    "- Never invent business data the user did not provide.\n"
    "- When done, reply with a one-paragraph summary of what you extracted."
)


@dataclass(frozen=True)
class EvolutionDelta:
    profile_delta: ProfileDelta
    memory_delta: ProfileDelta
    new_skills: tuple[Skill, ...]
    suggestions: tuple[ProfileDelta, ...]
    session_id: str


@dataclass(frozen=True)
class GateDecision:
    accepted: bool
    reason: str | None = None


@dataclass(frozen=True)
class RewardRecord:
    session_id: str
    maturity_term: float
    profile_term: float
    memory_term: float
    weights: tuple[float, float, float]
    reward: float


# -- reward telemetry ------------------------------------------------------

def _clamp01(value: float) -> float:
    return max(0.0, min(1.0, value))


def compute_reward(
    session_id: str,
    active_skill_meta: SkillMeta | None,
    profile_delta: ProfileDelta | None,
    memory_delta: ProfileDelta | None,
    weights: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
    norm_chars: int = 2000,
) -> RewardRecord:
    """Weighted sum of the maturity ordinal (over 3) and the applied delta
    sizes (characters over ``norm_chars``, clamped). Telemetry only; the
    value never feeds back into matching or gating."""
    w = tuple(float(x) for x in weights)
    if len(w) != 3 or any(x < 0 for x in w):
        raise ValueError("weights must be three non-negative numbers")
    if not math.isclose(sum(w), 1.0, abs_tol=1e-9):
        raise ValueError("weights must sum to 1")
    maturity_term = 0.0
    if active_skill_meta is not None:
        maturity_term = classify_maturity(active_skill_meta).value / MaturityLevel.PROFICIENT.value
    profile_term = _clamp01((profile_delta.char_count if profile_delta else 0) / norm_chars)
    memory_term = _clamp01((memory_delta.char_count if memory_delta else 0) / norm_chars)
    reward = w[0] * maturity_term + w[1] * profile_term + w[2] * memory_term
    return RewardRecord(
        session_id=session_id,
        maturity_term=maturity_term,
        profile_term=profile_term,
        memory_term=memory_term,
        weights=w,
        reward=reward,
    )


def cumulative_reward(records: Sequence[RewardRecord], gamma: float = 1.0) -> float:
    """Discounted sum over records in session order; the exponent is the
    1-based position."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    return sum(gamma**t * record.reward for t, record in enumerate(records, start=1))


# -- skill candidate gate --------------------------------------------------

def gate_skill_candidate(
    candidate: Skill,
    store: SkillStore,
    embed_provider=None,
    dedup_threshold: float = 0.9,
) -> GateDecision:
    """Accept iff the candidate is well formed, novel by name, and (when an
    embedding provider is available) not a near duplicate of an existing
    skill's description. Rejection is a value, never an exception."""
    if not SLUG_RE.match(candidate.name):
        return GateDecision(False, "invalid_name")
    if candidate.name in store:
        return GateDecision(False, "name_collision")
    if not candidate.desc.strip():
        return GateDecision(False, "empty_desc")
    triggers = [t for t in candidate.triggers if t.strip()]
    if not triggers:
        return GateDecision(False, "no_triggers")
    if not candidate.instr.strip():
        return GateDecision(False, "empty_instructions")
    if embed_provider is not None and len(store):
        try:
            candidate_vector = embed_provider.embed(candidate.desc)
            for existing in store.skills():
                score = cosine_similarity(
                    candidate_vector, embed_provider.embed(existing.desc)
                )
                if score >= dedup_threshold:
                    return GateDecision(False, "near_duplicate")
        except Exception:
            # Embedding unavailable: fall back to the name-collision check
            # already done above.
            pass
    try:
        candidate.validate()
    except Exception as exc:
        return GateDecision(False, f"invalid: {exc}")
    return GateDecision(True)


# -- review agent ----------------------------------------------------------

@dataclass
class ReviewCollector:
    """Accumulates validated tool invocations from the review run."""

    user_text: str  # concatenated user messages, the quotable span source
    profile_additions: list[SectionEdit]
    profile_replacements: list[SectionEdit]
    memory_additions: list[SectionEdit]
    memory_replacements: list[SectionEdit]
    observations: list[tuple[str, str]]  # (heading, fragment) behavior patterns
    candidates: list[Skill]


def _normalize_span(text: str) -> str:
    return " ".join(text.split()).lower()


def _review_profile_tool(collector: ReviewCollector) -> ToolDefinition:
    def handler(args: dict) -> str:
        basis = str(args.get("basis", "stated"))
        edit = SectionEdit(heading=str(args["section"]), fragment=str(args["content"]))
        if basis == "observed":
            collector.observations.append((edit.heading, edit.fragment))
            return f"observation recorded for section {edit.heading!r}"
        quote = str(args.get("quote", ""))
        if not quote.strip():
            raise ToolExecutionError(
                "stated facts require the exact user quote (or set basis='observed')"
            )
        if _normalize_span(quote) not in _normalize_span(collector.user_text):
            raise ToolExecutionError(
                "quote not found in the user's messages; only explicitly "
                "stated facts may enter the profile"
            )
        if args.get("mode", "add") == "replace":
            collector.profile_replacements.append(edit)
        else:
            collector.profile_additions.append(edit)
        return f"profile change staged for section {edit.heading!r}"

    return ToolDefinition(
        name="update_user_profile",
        description=(
            "Stage a user-profile change. Requires the exact quote where the "
            "user stated the fact; inferred patterns must use basis='observed'."
        ),
        parameter_schema=(
            ToolParameter("section", description="profile section heading"),
            ToolParameter("content", description="Markdown fragment"),
            ToolParameter("quote", description="exact user quote", required=False),
            ToolParameter("mode", description="'add' or 'replace'", required=False),
            ToolParameter("basis", description="'stated' or 'observed'", required=False),
        ),
        effect=ToolEffect.WORKSPACE_WRITE,
        handler=handler,
    )


def _review_memory_tool(collector: ReviewCollector) -> ToolDefinition:
    def handler(args: dict) -> str:
        edit = SectionEdit(heading=str(args["section"]), fragment=str(args["content"]))
        if args.get("mode", "add") == "replace":
            collector.memory_replacements.append(edit)
        else:
            collector.memory_additions.append(edit)
        return f"memory change staged for section {edit.heading!r}"

    return ToolDefinition(
        name="update_memory",
        description="Stage a long-term memory change (durable fact or decision).",
        parameter_schema=(
            ToolParameter("section", description="memory section heading"),
            ToolParameter("content", description="Markdown fragment"),
            ToolParameter("mode", description="'add' or 'replace'", required=False),
        ),
        effect=ToolEffect.WORKSPACE_WRITE,
        handler=handler,
    )


def _review_skill_tool(collector: ReviewCollector) -> ToolDefinition:
    def handler(args: dict) -> str:
        triggers = args.get("triggers", [])
        if isinstance(triggers, str):
            triggers = [t.strip() for t in triggers.split(",") if t.strip()]
        now = utc_now()
        candidate = Skill(
            name=str(args["name"]),
            desc=str(args.get("description", "")),
            triggers=tuple(str(t) for t in triggers),
            instr=str(args.get("instructions", "")),
            meta=SkillMeta(created_at=now, updated_at=now),
        )
        collector.candidates.append(candidate)
        return f"skill candidate staged: {candidate.name}"

    return ToolDefinition(
        name="extract_skill",
        description=(
            "Stage a reusable skill candidate: name (lowercase-hyphens), "
            "description, trigger keywords, and instructions."
        ),
        parameter_schema=(
            ToolParameter("name", description="slug name"),
            ToolParameter("description", description="one-line description"),
            ToolParameter("triggers", type="array", description="trigger keywords"),
            ToolParameter("instructions", description="step-by-step body"),
        ),
        effect=ToolEffect.WORKSPACE_WRITE,
        handler=handler,
    )


def load_transcript_messages(log_path: Path) -> list[Message]:
    messages: list[Message] = []
    if not Path(log_path).is_file():
        return messages
    for line in Path(log_path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        if record.get("type") == "message":
            messages.append(Message.from_dict(record["message"]))
    return messages


def _render_transcript(messages: Sequence[Message]) -> str:
    lines = []
    for message in messages:
        body = message.content
        if message.tool_calls:
            calls = ", ".join(c.tool_name for c in message.tool_calls)
            body = f"{body} [called: {calls}]".strip()
        lines.append(f"[{message.turn_index}] {message.role}: {body}")
    return "\n".join(lines)


# -- suggestion queue ------------------------------------------------------

def _read_json(path: Path, default):
    if not path.is_file():
        return default
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return default


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(data, indent=2, ensure_ascii=False), encoding="utf-8")
    tmp.replace(path)


def list_suggestions(ws: Workspace) -> list[dict]:
    return _read_json(ws.root / SUGGESTIONS_FILE, [])


def pending_observations(ws: Workspace) -> dict:
    return _read_json(ws.root / OBSERVATIONS_FILE, {})


def record_observations(
    ws: Workspace,
    session_id: str,
    observations: Sequence[tuple[str, str]],
    threshold: int = 2,
) -> list[dict]:
    """Tally behavior patterns across sessions; a pattern seen in at least
    ``threshold`` distinct sessions graduates to a pending suggestion."""
    tally = pending_observations(ws)
    suggestions = list_suggestions(ws)
    created: list[dict] = []
    for heading, fragment in observations:
        key = f"{_normalize_span(heading)}|{_normalize_span(fragment)}"
        entry = tally.get(key) or {
            "heading": heading,
            "fragment": fragment,
            "sessions": [],
            "suggested": False,
        }
        if session_id not in entry["sessions"]:
            entry["sessions"].append(session_id)
        if len(entry["sessions"]) >= threshold and not entry["suggested"]:
            suggestion = {
                "id": uuid.uuid4().hex[:12],
                "heading": entry["heading"],
                "fragment": entry["fragment"],
                "sessions": list(entry["sessions"]),
                "created_at": format_timestamp(utc_now()),
            }
            suggestions.append(suggestion)
            created.append(suggestion)
            entry["suggested"] = True
        tally[key] = entry
    _write_json(ws.root / OBSERVATIONS_FILE, tally)
    if created:
        _write_json(ws.root / SUGGESTIONS_FILE, suggestions)
    return created


def confirm_suggestion(ws: Workspace, suggestion_id: str, accept: bool) -> dict:
    """Consume a pending suggestion: accepted ones merge into USER.md with
    confirmed provenance, rejected ones are discarded. Either way the id is
    gone afterwards."""
    suggestions = list_suggestions(ws)
    match = next((s for s in suggestions if s["id"] == suggestion_id), None)
    if match is None:
        raise SuggestionNotFound(f"no pending suggestion {suggestion_id!r}")
    remaining = [s for s in suggestions if s["id"] != suggestion_id]
    if accept:
        delta = ProfileDelta(
            additions=(SectionEdit(match["heading"], match["fragment"]),),
            provenance=Provenance.BEHAVIOR_SUGGESTION,
            confirmed=True,
        )
        apply_profile_delta(ws, delta)
    _write_json(ws.root / SUGGESTIONS_FILE, remaining)
    return match


# -- reward persistence ----------------------------------------------------

def append_reward(ws: Workspace, record: RewardRecord) -> None:
    path = ws.root / REWARDS_FILE
    records = _read_json(path, [])
    records.append(asdict(record))
    _write_json(path, records)


def load_rewards(ws: Workspace) -> list[RewardRecord]:
    return [
        RewardRecord(
            session_id=r["session_id"],
            maturity_term=r["maturity_term"],
            profile_term=r["profile_term"],
            memory_term=r["memory_term"],
            weights=tuple(r["weights"]),
            reward=r["reward"],
        )
        for r in _read_json(ws.root / REWARDS_FILE, [])
    ]


# -- the evolution pass ----------------------------------------------------

def evolution_artifact_path(ws: Workspace, session_id: str) -> Path:
    return ws.sessions_dir / f"{session_id}.evolution.json"


def run_evolution(
    workspace: Workspace,
    store: SkillStore,
    session_id: str,
    log_path: Path,
    chat_provider,
    embed_provider=None,
    active_skill_meta: SkillMeta | None = None,
    dedup_threshold: float = 0.9,
    suggestion_threshold: int = 2,
    weights: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
    norm_chars: int = 2000,
    max_steps: int = 8,
) -> tuple[EvolutionDelta, dict]:
    """Review the session and apply what survives validation. Returns the
    delta plus the persisted audit artifact. Idempotent: a session that
    already has an artifact is left untouched.

    Provider failures propagate before any workspace write, so a failed
    pass is retryable and leaves no partial state.
    """
    artifact_path = evolution_artifact_path(workspace, session_id)
    if artifact_path.is_file():
        artifact = _read_json(artifact_path, {})
        empty = ProfileDelta(provenance=Provenance.POST_SESSION)
        return (
            EvolutionDelta(
                profile_delta=empty,
                memory_delta=empty,
                new_skills=(),
                suggestions=(),
                session_id=session_id,
            ),
            artifact,
        )

    transcript = load_transcript_messages(log_path)
    user_text = "\n".join(m.content for m in transcript if m.role == "user")
    collector = ReviewCollector(
        user_text=user_text,
        profile_additions=[],
        profile_replacements=[],
        memory_additions=[],
        memory_replacements=[],
        observations=[],
        candidates=[],
    )
    registry = ToolRegistry(
        [
            _review_profile_tool(collector),
            _review_memory_tool(collector),
            _review_skill_tool(collector),
        ]
    )
    from .runtime import react_loop  # deferred: runtime also imports evolution helpers

    review_input = [
        Message(role="user", content=_render_transcript(transcript), turn_index=0)
    ]
    review = react_loop(
        REVIEW_INSTRUCTIONS, review_input, registry, chat_provider, max_steps=max_steps
    )

    profile_delta = ProfileDelta(
        additions=tuple(collector.profile_additions),
        replacements=tuple(collector.profile_replacements),
        provenance=Provenance.POST_SESSION,
    )
    memory_delta = ProfileDelta(
        additions=tuple(collector.memory_additions),
        replacements=tuple(collector.memory_replacements),
        provenance=Provenance.POST_SESSION,
    )
    apply_profile_delta(workspace, profile_delta)
    apply_memory_delta(workspace, memory_delta)

    gate_decisions: list[dict] = []
    installed: list[Skill] = []
    for candidate in collector.candidates:
        decision = gate_skill_candidate(candidate, store, embed_provider, dedup_threshold)
        gate_decisions.append(
            {"name": candidate.name, "accepted": decision.accepted, "reason": decision.reason}
        )
        if decision.accepted:
            fresh = Skill(
                name=candidate.name,
                desc=candidate.desc,
                triggers=candidate.triggers,
                instr=candidate.instr,
                requires_sub_agent=candidate.requires_sub_agent,
                sub_agent=candidate.sub_agent,
                meta=SkillMeta.fresh(),
            )
            store.save(fresh)
            installed.append(fresh)

    created = record_observations(
        workspace, session_id, collector.observations, suggestion_threshold
    )
    suggestion_deltas = tuple(
        ProfileDelta(
            additions=(SectionEdit(s["heading"], s["fragment"]),),
            provenance=Provenance.BEHAVIOR_SUGGESTION,
            confirmed=False,
        )
        for s in created
    )

    reward = compute_reward(
        session_id, active_skill_meta, profile_delta, memory_delta, weights, norm_chars
    )
    append_reward(workspace, reward)

    final_review_text = next(
        (m.content for m in reversed(review.messages) if m.role == "assistant" and m.content),
        "",
    )
    artifact = {
        "session_id": session_id,
        "applied": {
            "profile_sections": [e.heading for e in profile_delta.additions + profile_delta.replacements],
            "memory_sections": [e.heading for e in memory_delta.additions + memory_delta.replacements],
        },
        "installed_skills": [skill.name for skill in installed],
        "gate_decisions": gate_decisions,
        "suggestions_created": [s["id"] for s in created],
        "observations": [list(pair) for pair in collector.observations],
        "reward": asdict(reward),
        "review_summary": final_review_text,
    }
    _write_json(artifact_path, artifact)

    delta = EvolutionDelta(
        profile_delta=profile_delta,
        memory_delta=memory_delta,
        new_skills=tuple(installed),
        suggestions=suggestion_deltas,
        session_id=session_id,
    )
    return delta, artifact
