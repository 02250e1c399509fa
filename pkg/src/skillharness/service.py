"""HTTP service: sessions, streaming chat over server-sent events, skill
administration, memory and suggestion access, and reward telemetry.

The service layer holds no business logic: every mutating endpoint routes
through the session manager, skill store, workspace, or evolution
operations, so replaying its requests through module calls yields the same
workspace bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .config import ApiConfig
from .errors import (
    ConfirmationRequired,
    FeedbackNotApplicable,
    HarnessError,
    IllegalPhase,
    InvalidUserId,
    MalformedSkill,
    ProviderError,
    SkillNotFound,
    StoreUnavailable,
    SuggestionNotFound,
    TurnNotFound,
)
from .evolution import confirm_suggestion, cumulative_reward, list_suggestions, load_rewards
from .runtime import SessionManager, SessionPhase
from .skills import (
    Skill,
    SkillMeta,
    SkillStore,
    SubAgentSpec,
    classify_maturity,
    format_timestamp,
    load_store,
    utc_now,
)
from .workspace import Workspace, init_workspace

_STATUS_BY_ERROR: tuple[tuple[type, int], ...] = (
    (InvalidUserId, 400),
    (MalformedSkill, 400),
    (SkillNotFound, 404),
    (SuggestionNotFound, 404),
    (TurnNotFound, 404),
    (FeedbackNotApplicable, 422),
    (IllegalPhase, 409),
    (ConfirmationRequired, 409),
    (ProviderError, 502),
    (StoreUnavailable, 503),
)


def _status_for(exc: HarnessError) -> int:
    for error_type, status in _STATUS_BY_ERROR:
        if isinstance(exc, error_type):
            return status
    return 500


class CreateSessionBody(BaseModel):
    user_id: str


class MessageBody(BaseModel):
    text: str = Field(min_length=1)


class FeedbackBody(BaseModel):
    turn_index: int
    positive: bool


class ConfirmBody(BaseModel):
    user_id: str
    accept: bool


class SkillBody(BaseModel):
    description: str
    triggers: list[str]
    instructions: str = ""
    requires_sub_agent: bool = False
    sub_agent: dict | None = None


def skill_payload(skill: Skill) -> dict:
    meta = skill.meta
    return {
        "name": skill.name,
        "description": skill.desc,
        "triggers": list(skill.triggers),
        "instructions": skill.instr,
        "references": dict(skill.refs),
        "requires_sub_agent": skill.requires_sub_agent,
        "sub_agent": (
            {
                "name": skill.sub_agent.name,
                "instructions": skill.sub_agent.instructions,
                "tools": list(skill.sub_agent.tool_names),
            }
            if skill.sub_agent
            else None
        ),
        "usage_count": meta.usage_count,
        "success_count": meta.success_count,
        "success_rate": meta.success_rate,
        "maturity": classify_maturity(meta).label,
        "created_at": format_timestamp(meta.created_at),
        "updated_at": format_timestamp(meta.updated_at),
    }


def sse_line(event: dict) -> str:
    return f"event: {event['type']}\ndata: {json.dumps(event, ensure_ascii=False)}\n\n"


def create_app(
    config: ApiConfig | None = None,
    manager: SessionManager | None = None,
    console_dist: Path | None = None,
) -> FastAPI:
    config = config or ApiConfig()
    manager = manager or SessionManager(config)
    app = FastAPI(title="skillharness", version="0.1.0")
    app.state.manager = manager
    app.state.config = config

    expected_token = (
        os.environ.get(config.auth_token_env) if config.auth_token_env else None
    )

    async def require_auth(request: Request) -> None:
        if not expected_token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {expected_token}":
            raise HTTPException(status_code=401, detail="invalid bearer token")

    guarded = [Depends(require_auth)]

    @app.exception_handler(HarnessError)
    async def harness_error_handler(request: Request, exc: HarnessError):
        return JSONResponse(
            status_code=_status_for(exc), content={"detail": str(exc)}
        )

    def user_workspace(user_id: str) -> Workspace:
        return init_workspace(Path(config.data_root), user_id)

    def user_store(user_id: str) -> SkillStore:
        return load_store(user_workspace(user_id).root)

    def session_handle(session_id: str):
        try:
            return manager.handle(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    # -- sessions ----------------------------------------------------------

    @app.post("/v1/sessions", dependencies=guarded)
    def create_session(body: CreateSessionBody):
        state = manager.create_session(body.user_id)
        return {
            "session_id": state.session_id,
            "user_id": state.user_id,
            "phase": state.phase.value,
        }

    @app.post("/v1/sessions/{session_id}/messages", dependencies=guarded)
    def post_message(session_id: str, body: MessageBody):
        handle = session_handle(session_id)
        if handle.state.phase is not SessionPhase.OPEN:
            raise HTTPException(
                status_code=409,
                detail=f"session is {handle.state.phase.value}, not open",
            )

        def stream():
            try:
                for event in manager.stream_message(session_id, body.text):
                    yield sse_line(event)
            except HarnessError as exc:
                yield sse_line({"type": "error", "message": str(exc)})

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.post("/v1/sessions/{session_id}/end", dependencies=guarded)
    def end_session(session_id: str):
        session_handle(session_id)
        state = manager.end_session(session_id)
        return {"session_id": session_id, "phase": state.phase.value}

    @app.post("/v1/sessions/{session_id}/evolve", dependencies=guarded)
    def evolve(session_id: str):
        session_handle(session_id)
        artifact = manager.evolve(session_id)
        return {"session_id": session_id, "artifact": artifact}

    @app.post("/v1/sessions/{session_id}/feedback", dependencies=guarded)
    def feedback(session_id: str, body: FeedbackBody):
        session_handle(session_id)
        adjustment = manager.feedback(session_id, body.turn_index, body.positive)
        return {
            "session_id": session_id,
            "turn_index": body.turn_index,
            "adjustment": adjustment,
        }

    # -- skills ------------------------------------------------------------

    @app.get("/v1/skills", dependencies=guarded)
    def list_skills(user_id: str = Query(...)):
        store = user_store(user_id)
        return {"skills": [skill_payload(s) for s in store.skills()]}

    @app.get("/v1/skills/{name}", dependencies=guarded)
    def get_skill(name: str, user_id: str = Query(...)):
        return skill_payload(user_store(user_id).get(name))

    @app.put("/v1/skills/{name}", dependencies=guarded)
    def put_skill(name: str, body: SkillBody, user_id: str = Query(...)):
        store = user_store(user_id)
        try:
            existing_meta = store.get(name).meta
            meta = SkillMeta(
                created_at=existing_meta.created_at,
                updated_at=utc_now(),
                usage_count=existing_meta.usage_count,
                success_count=existing_meta.success_count,
            )
            created = False
        except SkillNotFound:
            meta = SkillMeta.fresh()
            created = True
        sub_agent = None
        if body.sub_agent:
            sub_agent = SubAgentSpec(
                name=body.sub_agent.get("name", ""),
                instructions=body.sub_agent.get("instructions", ""),
                tool_names=tuple(body.sub_agent.get("tools", [])),
            )
        skill = Skill(
            name=name,
            desc=body.description,
            triggers=tuple(body.triggers),
            instr=body.instructions,
            requires_sub_agent=body.requires_sub_agent,
            sub_agent=sub_agent,
            meta=meta,
        )
        skill.validate()  # MalformedSkill -> 400 before any write
        store.save(skill)
        return JSONResponse(
            status_code=201 if created else 200, content=skill_payload(store.get(name))
        )

    @app.delete("/v1/skills/{name}", dependencies=guarded)
    def delete_skill(name: str, user_id: str = Query(...)):
        store = user_store(user_id)
        store.delete(name)
        return {"deleted": name}

    # -- memory, suggestions, rewards --------------------------------------

    @app.get("/v1/users/{user_id}/memory", dependencies=guarded)
    def get_memory(user_id: str):
        ws = user_workspace(user_id)
        return {
            "user_id": user_id,
            "user_profile": ws.user_profile(),
            "memory": ws.memory(),
        }

    @app.get("/v1/users/{user_id}/suggestions", dependencies=guarded)
    def get_suggestions(user_id: str):
        return {"suggestions": list_suggestions(user_workspace(user_id))}

    @app.post("/v1/suggestions/{suggestion_id}/confirm", dependencies=guarded)
    def confirm(suggestion_id: str, body: ConfirmBody):
        ws = user_workspace(body.user_id)
        consumed = confirm_suggestion(ws, suggestion_id, body.accept)
        return {
            "id": suggestion_id,
            "accepted": body.accept,
            "heading": consumed["heading"],
        }

    @app.get("/v1/users/{user_id}/rewards", dependencies=guarded)
    def get_rewards(user_id: str):
        ws = user_workspace(user_id)
        records = load_rewards(ws)
        return {
            "records": [
                {
                    "session_id": r.session_id,
                    "maturity_term": r.maturity_term,
                    "profile_term": r.profile_term,
                    "memory_term": r.memory_term,
                    "weights": list(r.weights),
                    "reward": r.reward,
                }
                for r in records
            ],
            "gamma": config.gamma,
            "cumulative": cumulative_reward(records, config.gamma),
        }

    dist = console_dist if console_dist is not None else Path("frontend/dist")
    if dist.is_dir():
        app.mount("/console", StaticFiles(directory=dist, html=True), name="console")

    return app
