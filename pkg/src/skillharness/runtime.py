"""Online execution loop: session state machine, ReAct turn pipeline,
sub-agent delegation, and the per-session log.

A turn runs the fixed pipeline (append user message, match skill, inject
on match, execute via main agent or delegated sub-agent, transition state,
compress if over budget) and emits typed events while doing so. The same
generator drives both the CLI renderer and the SSE endpoint.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Generator, Iterable, Sequence

from .context import (
    CompressionState,
    ContextBudget,
    Message,
    build_instructions,
    compress_history,
    estimate_tokens,
    inject_skill,
    should_compress,
)
from .errors import (
    CompressionFailed,
    FeedbackNotApplicable,
    IllegalPhase,
    ProviderError,
    SubAgentConfigError,
    TurnNotFound,
)
from .matching import EmbeddingCache, MatcherConfig, match_skill
from .skills import Skill, SkillStore, format_timestamp, load_store, utc_now
from .tools import ToolExecutionError, ToolRegistry, builtin_registry
from .workspace import Workspace, init_workspace, needs_initial_guidance

DEFAULT_MAX_STEPS = 8
DELTA_CHUNK_CHARS = 96

ONBOARDING_DIRECTIVE = (
    "This is the user's first interaction. Early in the conversation, ask "
    "about their main products, target markets, and working preferences, "
    "and record facts they state with the update_user_profile tool."
)

TRUNCATION_NOTICE = "[truncated: tool-call step budget of {max_steps} reached]"


class SessionPhase(str, Enum):
    OPEN = "open"
    ENDED = "ended"
    EVOLVED = "evolved"


@dataclass
class TurnRecord:
    """Feedback bookkeeping for one completed turn."""

    turn_index: int  # the user message's turn index
    skill_used: str | None
    heuristic_success: bool
    override: bool | None = None

    @property
    def effective_success(self) -> bool:
        return self.heuristic_success if self.override is None else self.override


@dataclass
class SessionState:
    """The session quadruple (history, profile view, skills view, compression
    state) plus lifecycle bookkeeping. Treated as immutable: pipeline steps
    build new instances via ``replace``."""

    session_id: str
    user_id: str
    history: list[Message] = field(default_factory=list)
    profile_view: str = ""
    skills_view: dict[str, Skill] = field(default_factory=dict)
    compression: CompressionState = field(default_factory=CompressionState)
    active_skill: str | None = None
    phase: SessionPhase = SessionPhase.OPEN
    next_turn_index: int = 0
    turn_records: list[TurnRecord] = field(default_factory=list)


@dataclass(frozen=True)
class TurnResult:
    messages_appended: tuple[Message, ...]
    tool_errors: tuple[tuple[str, str], ...]
    success: bool
    skill_used: str | None

    def __post_init__(self) -> None:
        if self.success and self.tool_errors:
            raise ValueError("a turn with tool errors cannot be successful")


@dataclass(frozen=True)
class ReactResult:
    messages: tuple[Message, ...]
    tool_errors: tuple[tuple[str, str], ...]
    steps: int
    truncated: bool
    executed_tools: tuple[str, ...]


@dataclass
class RuntimeDeps:
    workspace: Workspace
    store: SkillStore
    registry: ToolRegistry
    chat_provider: object
    embed_provider: object | None = None
    matcher_config: MatcherConfig = field(default_factory=MatcherConfig)
    budget: ContextBudget = field(default_factory=ContextBudget)
    cache: EmbeddingCache | None = None
    max_steps: int = DEFAULT_MAX_STEPS


def new_session(
    user_id: str, workspace: Workspace, store: SkillStore, session_id: str | None = None
) -> SessionState:
    return SessionState(
        session_id=session_id or uuid.uuid4().hex[:12],
        user_id=user_id,
        profile_view=workspace.profile_snapshot(),
        skills_view={skill.name: skill for skill in store.skills()},
    )


# -- session log -----------------------------------------------------------

def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest_messages(messages: Iterable[Message]) -> str:
    payload = canonical_json([m.to_dict() for m in messages])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class SessionLog:
    """Append-only JSONL record of everything needed to replay the session:
    one record per line, message records one message per line."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def append(self, record: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    def session_start(
        self, state: SessionState, store: SkillStore, budget: ContextBudget
    ) -> None:
        self.append(
            {
                "type": "session_start",
                "session_id": state.session_id,
                "user_id": state.user_id,
                "ts": format_timestamp(utc_now()),
                "budget": {
                    "max_tokens": budget.max_tokens,
                    "retain_recent": budget.retain_recent,
                },
                "skill_meta": _meta_map(store),
            }
        )

    def message(self, message: Message) -> None:
        self.append({"type": "message", "message": message.to_dict()})

    def skill_usage(self, skill_name: str, success: bool) -> None:
        self.append({"type": "skill_usage", "skill": skill_name, "success": success})

    def compression(
        self,
        level: int,
        summary_message: Message,
        retain_recent: int,
        tokens_before: int,
        tokens_after: int,
        history: Sequence[Message],
    ) -> None:
        self.append(
            {
                "type": "compression",
                "level": level,
                "summary_message": summary_message.to_dict(),
                "retain_recent": retain_recent,
                "tokens_before": tokens_before,
                "tokens_after": tokens_after,
                "digest_after": digest_messages(history),
            }
        )

    def turn_summary(
        self,
        turn_index: int,
        skill_used: str | None,
        success: bool,
        token_estimate: int,
        turn_messages: Sequence[Message],
    ) -> None:
        self.append(
            {
                "type": "turn_summary",
                "turn_index": turn_index,
                "skill_used": skill_used,
                "success": success,
                "token_estimate": token_estimate,
                "digest": digest_messages(turn_messages),
            }
        )

    def feedback(
        self, turn_index: int, positive: bool, adjustment: int, skill: str | None
    ) -> None:
        self.append(
            {
                "type": "feedback",
                "turn_index": turn_index,
                "positive": positive,
                "adjustment": adjustment,
                "skill": skill,
            }
        )

    def session_end(self, state: SessionState, store: SkillStore) -> None:
        self.append({"type": "session_end", "ts": format_timestamp(utc_now())})
        self.append(
            {
                "type": "final_state",
                "history_len": len(state.history),
                "compression_level": state.compression.level,
                "next_turn_index": state.next_turn_index,
                "skill_meta": _meta_map(store),
            }
        )


def _meta_map(store: SkillStore) -> dict:
    return {
        skill.name: {
            "usage_count": skill.meta.usage_count,
            "success_count": skill.meta.success_count,
        }
        for skill in store.skills()
    }


# -- ReAct loop ------------------------------------------------------------

def _chunks(text: str, size: int = DELTA_CHUNK_CHARS) -> list[str]:
    return [text[i : i + size] for i in range(0, len(text), size)] or []


def react_steps(
    instructions: str,
    history: Sequence[Message],
    registry: ToolRegistry,
    chat_provider,
    max_steps: int = DEFAULT_MAX_STEPS,
    next_index: int = 0,
    emit_deltas: bool = True,
) -> Generator[dict, None, ReactResult]:
    """Alternate provider calls and tool executions, yielding events.

    Each assistant reply either carries tool calls (each answered with a
    role=tool message, loop continues) or final content (loop ends). At
    ``max_steps`` provider calls without a final answer, a truncation
    notice is appended instead.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    produced: list[Message] = []
    tool_errors: list[tuple[str, str]] = []
    executed: list[str] = []
    steps = 0
    while steps < max_steps:
        prompt = [Message(role="system", content=instructions)] + list(history) + produced
        try:
            reply = chat_provider.complete(prompt, tools=registry.definitions())
        except ProviderError as exc:
            # Attach the partial progress so the caller can keep the
            # already-produced messages in history.
            exc.partial = ReactResult(
                messages=tuple(produced),
                tool_errors=tuple(tool_errors),
                steps=steps,
                truncated=False,
                executed_tools=tuple(executed),
            )
            raise
        steps += 1
        assistant = Message(
            role="assistant",
            content=reply.content,
            tool_calls=reply.tool_calls,
            turn_index=next_index,
        )
        next_index += 1
        produced.append(assistant)
        if not reply.tool_calls:
            if emit_deltas:
                for chunk in _chunks(reply.content):
                    yield {"type": "delta", "text": chunk}
            return ReactResult(
                messages=tuple(produced),
                tool_errors=tuple(tool_errors),
                steps=steps,
                truncated=False,
                executed_tools=tuple(executed),
            )
        for call in reply.tool_calls:
            yield {
                "type": "tool_started",
                "tool": call.tool_name,
                "call_id": call.call_id,
            }
            tool = registry.get(call.tool_name)
            error_text: str | None = None
            if tool is None:
                error_text = f"unknown tool {call.tool_name!r}"
                content = json.dumps({"error": error_text, "known_tools": registry.names()})
            else:
                try:
                    content = tool.run(call.arguments)
                    executed.append(call.tool_name)
                except ToolExecutionError as exc:
                    error_text = str(exc)
                    content = json.dumps({"error": error_text})
            if error_text is not None:
                tool_errors.append((call.tool_name, error_text))
            yield {
                "type": "tool_finished",
                "tool": call.tool_name,
                "call_id": call.call_id,
                "error": error_text is not None,
            }
            produced.append(
                Message(
                    role="tool",
                    content=content,
                    tool_call_id=call.call_id,
                    turn_index=next_index,
                )
            )
            next_index += 1
    produced.append(
        Message(
            role="assistant",
            content=TRUNCATION_NOTICE.format(max_steps=max_steps),
            turn_index=next_index,
        )
    )
    return ReactResult(
        messages=tuple(produced),
        tool_errors=tuple(tool_errors),
        steps=steps,
        truncated=True,
        executed_tools=tuple(executed),
    )


def react_loop(
    instructions: str,
    history: Sequence[Message],
    registry: ToolRegistry,
    chat_provider,
    max_steps: int = DEFAULT_MAX_STEPS,
    next_index: int = 0,
) -> ReactResult:
    """Non-streaming wrapper over :func:`react_steps`."""
    generator = react_steps(
        instructions, history, registry, chat_provider, max_steps, next_index,
        emit_deltas=False,
    )
    while True:
        try:
            next(generator)
        except StopIteration as stop:
            return stop.value


# -- sub-agent delegation --------------------------------------------------

def delegate_steps(
    state: SessionState,
    skill: Skill,
    deps: RuntimeDeps,
    history: Sequence[Message],
    next_index: int,
) -> Generator[dict, None, ReactResult]:
    """Run the skill's sub-agent over a scratch context seeded from the
    current history. Only its final assistant message flows back; scratch
    messages (intermediate tool traffic) are discarded."""
    if not skill.requires_sub_agent or skill.sub_agent is None:
        raise SubAgentConfigError(f"skill {skill.name} does not declare a sub-agent")
    try:
        sub_registry = deps.registry.subset(skill.sub_agent.tool_names)
    except KeyError as exc:
        raise SubAgentConfigError(
            f"sub-agent of {skill.name} names unknown tool {exc.args[0]!r}"
        ) from exc
    scratch = yield from react_steps(
        skill.sub_agent.instructions,
        history,
        sub_registry,
        deps.chat_provider,
        deps.max_steps,
        next_index=0,  # scratch indexes are local and discarded
        emit_deltas=False,
    )
    final = next(
        (m for m in reversed(scratch.messages) if m.role == "assistant" and m.content),
        None,
    )
    content = final.content if final else TRUNCATION_NOTICE.format(max_steps=deps.max_steps)
    for chunk in _chunks(content):
        yield {"type": "delta", "text": chunk}
    message = Message(role="assistant", content=content, turn_index=next_index)
    return ReactResult(
        messages=(message,),
        tool_errors=scratch.tool_errors,
        steps=scratch.steps,
        truncated=scratch.truncated,
        executed_tools=scratch.executed_tools,
    )


def delegate_to_sub_agent(
    state: SessionState, skill: Skill, deps: RuntimeDeps
) -> list[Message]:
    """Non-streaming delegation; returns the messages to append."""
    generator = delegate_steps(
        state, skill, deps, state.history, state.next_turn_index
    )
    while True:
        try:
            next(generator)
        except StopIteration as stop:
            return list(stop.value.messages)


# -- state transition ------------------------------------------------------

PROFILE_TOOLS = ("update_user_profile", "update_memory")


def apply_transition(
    state: SessionState,
    appended: Sequence[Message],
    deps: RuntimeDeps,
    profile_touched: bool,
    skills_touched: bool,
    active_skill: str | None,
    turn_record: TurnRecord,
) -> SessionState:
    """History grows by the turn's messages; the profile view refreshes only
    if a profile tool ran; the skills view refreshes only if the store
    changed. Compression state is handled by the caller at the boundary."""
    return replace(
        state,
        history=state.history + list(appended),
        profile_view=deps.workspace.profile_snapshot() if profile_touched else state.profile_view,
        skills_view=(
            {skill.name: skill for skill in deps.store.skills()}
            if skills_touched
            else state.skills_view
        ),
        active_skill=active_skill if active_skill is not None else state.active_skill,
        next_turn_index=state.next_turn_index + len(appended),
        turn_records=state.turn_records + [turn_record],
    )


# -- the turn pipeline -----------------------------------------------------

def run_turn_events(
    state: SessionState,
    user_input: str,
    deps: RuntimeDeps,
    log: SessionLog | None = None,
) -> Generator[dict, None, tuple[SessionState, TurnResult]]:
    """Execute one full turn, yielding events in pipeline order:
    match_result, tool_started/tool_finished, delta, compression,
    turn_summary. Returns the successor state and the turn result."""
    if state.phase is not SessionPhase.OPEN:
        raise IllegalPhase(f"cannot post to a session in phase {state.phase.value}")

    appended: list[Message] = []
    tool_errors: list[tuple[str, str]] = []
    provider_failed = False
    executed_tools: tuple[str, ...] = ()
    next_index = state.next_turn_index

    user_message = Message(role="user", content=user_input, turn_index=next_index)
    next_index += 1
    appended.append(user_message)

    outcome = match_skill(
        user_input,
        deps.store,
        deps.matcher_config,
        chat_provider=deps.chat_provider,
        embed_provider=deps.embed_provider,
        cache=deps.cache,
    )
    match = outcome.result
    yield {
        "type": "match_result",
        "skill": match.skill_name if match else None,
        "match_type": match.match_type if match else None,
        "confidence": match.confidence if match else None,
        "degraded": outcome.degraded,
    }

    skill: Skill | None = None
    if match is not None:
        skill = deps.store.get(match.skill_name)
        working = state.history + appended
        pair = inject_skill(working, skill)[len(working):]
        appended.extend(pair)
        next_index += len(pair)

    try:
        if skill is not None and skill.requires_sub_agent:
            result = yield from delegate_steps(
                state, skill, deps, state.history + appended, next_index
            )
        else:
            instructions = build_instructions(deps.workspace, skill)
            if needs_initial_guidance(deps.workspace):
                instructions = f"{ONBOARDING_DIRECTIVE}\n\n{instructions}"
            result = yield from react_steps(
                instructions,
                state.history + appended,
                deps.registry,
                deps.chat_provider,
                deps.max_steps,
                next_index,
            )
        appended.extend(result.messages)
        next_index += len(result.messages)
        tool_errors.extend(result.tool_errors)
        executed_tools = result.executed_tools
    except ProviderError as exc:
        provider_failed = True
        partial = getattr(exc, "partial", None)
        if partial is not None:
            appended.extend(partial.messages)
            next_index += len(partial.messages)
            tool_errors.extend(partial.tool_errors)
            executed_tools = partial.executed_tools
        yield {"type": "error", "message": str(exc)}
        notice = Message(
            role="assistant",
            content=f"[turn error] provider failure: {exc}",
            turn_index=next_index,
        )
        next_index += 1
        appended.append(notice)

    success = not provider_failed and not tool_errors
    skills_touched = False
    if skill is not None:
        deps.store.record_usage(skill.name, success)
        skills_touched = True
        if log:
            log.skill_usage(skill.name, success)

    if log:
        for message in appended:
            log.message(message)

    record = TurnRecord(
        turn_index=user_message.turn_index,
        skill_used=skill.name if skill else None,
        heuristic_success=success,
    )
    new_state = apply_transition(
        state,
        appended,
        deps,
        profile_touched=any(name in PROFILE_TOOLS for name in executed_tools),
        skills_touched=skills_touched,
        active_skill=skill.name if skill else None,
        turn_record=record,
    )

    if should_compress(new_state.history, deps.budget):
        tokens_before = estimate_tokens(new_state.history)
        try:
            compressed, compression = compress_history(
                new_state.history, deps.budget, deps.chat_provider, new_state.compression
            )
            tokens_after = estimate_tokens(compressed)
            new_state = replace(new_state, history=compressed, compression=compression)
            if log:
                log.compression(
                    compression.level,
                    compressed[0],
                    deps.budget.retain_recent,
                    tokens_before,
                    tokens_after,
                    compressed,
                )
            yield {
                "type": "compression",
                "level": compression.level,
                "tokens_before": tokens_before,
                "tokens_after": tokens_after,
            }
        except CompressionFailed as exc:
            # The turn itself stands; the oversized history is retried at
            # the next boundary.
            yield {"type": "error", "message": f"compression failed: {exc}"}

    token_estimate = estimate_tokens(new_state.history)
    if log:
        log.turn_summary(
            user_message.turn_index, record.skill_used, success, token_estimate, appended
        )
    yield {
        "type": "turn_summary",
        "turn_index": user_message.turn_index,
        "skill_used": record.skill_used,
        "success": success,
        "token_estimate": token_estimate,
        "tool_errors": [list(pair) for pair in tool_errors],
        "compression_level": new_state.compression.level,
    }
    turn_result = TurnResult(
        messages_appended=tuple(appended),
        tool_errors=tuple(tool_errors),
        success=success,
        skill_used=record.skill_used,
    )
    return new_state, turn_result


def run_turn(
    state: SessionState,
    user_input: str,
    deps: RuntimeDeps,
    log: SessionLog | None = None,
) -> tuple[SessionState, TurnResult]:
    """Drain the event stream and return the final (state, result) pair."""
    generator = run_turn_events(state, user_input, deps, log)
    while True:
        try:
            next(generator)
        except StopIteration as stop:
            return stop.value


def end_session(
    state: SessionState, store: SkillStore, log: SessionLog | None = None
) -> SessionState:
    if state.phase is not SessionPhase.OPEN:
        raise IllegalPhase(f"cannot end a session in phase {state.phase.value}")
    ended = replace(state, phase=SessionPhase.ENDED)
    if log:
        log.session_end(ended, store)
    return ended


# -- feedback --------------------------------------------------------------

def apply_feedback(
    state: SessionState, store: SkillStore, turn_index: int, positive: bool,
    log: SessionLog | None = None,
) -> int:
    """Override the heuristic success verdict of one turn. Returns the
    success_count adjustment applied (-1, 0, or +1)."""
    record = next((r for r in state.turn_records if r.turn_index == turn_index), None)
    if record is None:
        raise TurnNotFound(f"no turn with index {turn_index}")
    if record.skill_used is None:
        raise FeedbackNotApplicable(f"turn {turn_index} did not use a skill")
    adjustment = int(positive) - int(record.effective_success)
    record.override = positive
    if adjustment:
        store.amend_success(record.skill_used, adjustment)
    if log:
        log.feedback(turn_index, positive, adjustment, record.skill_used)
    return adjustment


# -- session manager -------------------------------------------------------

@dataclass
class SessionHandle:
    state: SessionState
    deps: RuntimeDeps
    log: SessionLog
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionManager:
    """Owns live sessions: one lock per session so requests on the same
    session serialize while distinct sessions run concurrently."""

    def __init__(self, config, chat_provider=None, embed_provider=None):
        from .config import build_providers  # deferred: config imports providers

        self.config = config
        if chat_provider is None or (
            embed_provider is None and config.provider == "live"
        ):
            built_chat, built_embed = build_providers(config)
            chat_provider = chat_provider or built_chat
            embed_provider = embed_provider or built_embed
        self.chat_provider = chat_provider
        self.embed_provider = embed_provider
        self.sessions: dict[str, SessionHandle] = {}
        self.evolution_jobs: list[str] = []
        self._lock = threading.Lock()

    def create_session(self, user_id: str) -> SessionState:
        workspace = init_workspace(Path(self.config.data_root), user_id)
        store = load_store(workspace.root)
        deps = RuntimeDeps(
            workspace=workspace,
            store=store,
            registry=builtin_registry(workspace),
            chat_provider=self.chat_provider,
            embed_provider=self.embed_provider,
            matcher_config=MatcherConfig(theta=self.config.theta),
            budget=ContextBudget(
                max_tokens=self.config.max_tokens,
                retain_recent=self.config.retain_recent,
            ),
            cache=EmbeddingCache.for_store(store),
            max_steps=self.config.max_steps,
        )
        state = new_session(user_id, workspace, store)
        log = SessionLog(workspace.sessions_dir / f"{state.session_id}.jsonl")
        log.session_start(state, store, deps.budget)
        handle = SessionHandle(state=state, deps=deps, log=log)
        with self._lock:
            self.sessions[state.session_id] = handle
        return state

    def handle(self, session_id: str) -> SessionHandle:
        with self._lock:
            try:
                return self.sessions[session_id]
            except KeyError:
                raise KeyError(session_id) from None

    def stream_message(self, session_id: str, text: str) -> Generator[dict, None, None]:
        handle = self.handle(session_id)
        with handle.lock:
            new_state = yield from run_turn_events(
                handle.state, text, handle.deps, handle.log
            )
            handle.state = new_state[0]

    def post_message(self, session_id: str, text: str) -> TurnResult:
        handle = self.handle(session_id)
        with handle.lock:
            handle.state, result = run_turn(handle.state, text, handle.deps, handle.log)
        return result

    def end_session(self, session_id: str) -> SessionState:
        handle = self.handle(session_id)
        with handle.lock:
            handle.state = end_session(handle.state, handle.deps.store, handle.log)
        self.evolution_jobs.append(session_id)
        if self.config.evolution_mode == "auto":
            try:
                self.evolve(session_id)
            except ProviderError:
                # Evolution is deferred; the job stays queued and the
                # session stays ended (retryable via the evolve endpoint).
                pass
        return handle.state

    def evolve(self, session_id: str) -> dict:
        from .evolution import run_evolution  # deferred: evolution uses react_loop

        handle = self.handle(session_id)
        with handle.lock:
            if handle.state.phase is SessionPhase.OPEN:
                raise IllegalPhase("session is still open; end it before evolving")
            active_meta = None
            if handle.state.active_skill:
                try:
                    active_meta = handle.deps.store.get(handle.state.active_skill).meta
                except Exception:
                    active_meta = None
            delta, artifact = run_evolution(
                workspace=handle.deps.workspace,
                store=handle.deps.store,
                session_id=session_id,
                log_path=handle.log.path,
                chat_provider=self.chat_provider,
                embed_provider=self.embed_provider,
                active_skill_meta=active_meta,
                dedup_threshold=self.config.dedup_threshold,
                suggestion_threshold=self.config.suggestion_threshold,
                weights=self.config.weights,
                norm_chars=self.config.norm_chars,
                max_steps=self.config.max_steps,
            )
            handle.state = replace(handle.state, phase=SessionPhase.EVOLVED)
        if session_id in self.evolution_jobs:
            self.evolution_jobs.remove(session_id)
        return artifact

    def feedback(self, session_id: str, turn_index: int, positive: bool) -> int:
        handle = self.handle(session_id)
        with handle.lock:
            return apply_feedback(
                handle.state, handle.deps.store, turn_index, positive, handle.log
            )
