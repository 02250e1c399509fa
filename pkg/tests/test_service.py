from __future__ import annotations

import json
from dataclasses import replace

import pytest
from fastapi.testclient import TestClient

from skillharness.config import ApiConfig
from skillharness.evolution import append_reward, compute_reward, record_observations
from skillharness.providers import ScriptedChatProvider
from skillharness.runtime import SessionManager
from skillharness.service import create_app
from skillharness.workspace import init_workspace


def parse_sse(body: str) -> list[tuple[str, dict]]:
    events = []
    for block in body.strip().split("\n\n"):
        lines = block.splitlines()
        assert lines[0].startswith("event: ")
        assert lines[1].startswith("data: ")
        events.append((lines[0][len("event: "):], json.loads(lines[1][len("data: "):])))
    return events


@pytest.fixture
def config(tmp_path):
    return ApiConfig(data_root=str(tmp_path / "data"))


@pytest.fixture
def manager(config):
    return SessionManager(config)


@pytest.fixture
def client(config, manager):
    return TestClient(create_app(config, manager))


def open_session(client, user_id="svc-user") -> str:
    response = client.post("/v1/sessions", json={"user_id": user_id})
    assert response.status_code == 200
    body = response.json()
    assert body["phase"] == "open"
    return body["session_id"]


# -- sessions and streaming ------------------------------------------------

def test_create_session(client):
    response = client.post("/v1/sessions", json={"user_id": "alice"})
    assert response.status_code == 200
    assert response.json()["user_id"] == "alice"


def test_create_session_invalid_user(client):
    response = client.post("/v1/sessions", json={"user_id": "../escape"})
    assert response.status_code == 400


def test_message_streams_events(client):
    session_id = open_session(client)
    response = client.post(
        f"/v1/sessions/{session_id}/messages",
        json={"text": "please draft a quotation for 500 units"},
    )
    assert response.status_code == 200
    assert response.headers["content-type"].startswith("text/event-stream")
    events = parse_sse(response.text)
    kinds = [kind for kind, _ in events]
    assert kinds[0] == "match_result"
    assert kinds[-1] == "turn_summary"
    assert "delta" in kinds
    for kind, data in events:
        assert data["type"] == kind
    match = events[0][1]
    assert match["skill"] == "quotation-email"
    assert match["match_type"] == "keyword"
    summary = events[-1][1]
    assert summary["skill_used"] == "quotation-email"
    assert summary["turn_index"] == 0


def test_message_deltas_concatenate(client):
    session_id = open_session(client)
    response = client.post(
        f"/v1/sessions/{session_id}/messages", json={"text": "hello there"}
    )
    events = parse_sse(response.text)
    streamed = "".join(d["text"] for k, d in events if k == "delta")
    assert streamed  # the canned reply arrives through deltas


def test_message_unknown_session(client):
    response = client.post("/v1/sessions/nope/messages", json={"text": "hi"})
    assert response.status_code == 404


def test_message_empty_text(client):
    session_id = open_session(client)
    response = client.post(f"/v1/sessions/{session_id}/messages", json={"text": ""})
    assert response.status_code == 422


def test_message_after_end_conflicts(client):
    session_id = open_session(client)
    client.post(f"/v1/sessions/{session_id}/end")
    response = client.post(f"/v1/sessions/{session_id}/messages", json={"text": "hi"})
    assert response.status_code == 409


def test_provider_failure_surfaces_as_error_event(client, manager):
    session_id = open_session(client)
    handle = manager.handle(session_id)
    handle.deps = replace(handle.deps, chat_provider=ScriptedChatProvider([]))
    response = client.post(
        f"/v1/sessions/{session_id}/messages", json={"text": "hi"}
    )
    assert response.status_code == 200  # failure arrives inside the stream
    kinds = [kind for kind, _ in parse_sse(response.text)]
    assert "error" in kinds
    assert kinds[-1] == "turn_summary"  # the turn still closes


def test_end_session_and_auto_evolution(client, manager, config, tmp_path):
    session_id = open_session(client)
    client.post(f"/v1/sessions/{session_id}/messages", json={"text": "hello"})
    response = client.post(f"/v1/sessions/{session_id}/end")
    assert response.status_code == 200
    assert response.json()["phase"] == "evolved"  # auto mode evolves on end
    artifact = client.post(f"/v1/sessions/{session_id}/evolve")
    assert artifact.status_code == 200
    assert artifact.json()["artifact"]["session_id"] == session_id


def test_end_twice_conflicts(client):
    session_id = open_session(client)
    client.post(f"/v1/sessions/{session_id}/end")
    assert client.post(f"/v1/sessions/{session_id}/end").status_code == 409


def test_evolve_while_open_conflicts(client):
    session_id = open_session(client)
    assert client.post(f"/v1/sessions/{session_id}/evolve").status_code == 409


def test_manual_mode_defers_evolution(tmp_path):
    config = ApiConfig(data_root=str(tmp_path / "data"), evolution_mode="manual")
    manager = SessionManager(config)
    client = TestClient(create_app(config, manager))
    session_id = open_session(client)
    client.post(f"/v1/sessions/{session_id}/messages", json={"text": "hi"})
    response = client.post(f"/v1/sessions/{session_id}/end")
    assert response.json()["phase"] == "ended"
    assert session_id in manager.evolution_jobs
    response = client.post(f"/v1/sessions/{session_id}/evolve")
    assert response.status_code == 200
    assert session_id not in manager.evolution_jobs


def test_feedback_roundtrip(client):
    session_id = open_session(client)
    client.post(
        f"/v1/sessions/{session_id}/messages",
        json={"text": "I need a quotation for bolts"},
    )
    response = client.post(
        f"/v1/sessions/{session_id}/feedback",
        json={"turn_index": 0, "positive": False},
    )
    assert response.status_code == 200
    assert response.json()["adjustment"] == -1
    skill = client.get("/v1/skills/quotation-email", params={"user_id": "svc-user"}).json()
    assert (skill["usage_count"], skill["success_count"]) == (1, 0)


def test_feedback_unknown_turn(client):
    session_id = open_session(client)
    response = client.post(
        f"/v1/sessions/{session_id}/feedback", json={"turn_index": 7, "positive": True}
    )
    assert response.status_code == 404


def test_feedback_turn_without_skill(client):
    session_id = open_session(client)
    client.post(f"/v1/sessions/{session_id}/messages", json={"text": "hello"})
    response = client.post(
        f"/v1/sessions/{session_id}/feedback", json={"turn_index": 0, "positive": True}
    )
    assert response.status_code == 422


# -- skill administration --------------------------------------------------

def test_list_default_skills(client):
    response = client.get("/v1/skills", params={"user_id": "fresh"})
    assert response.status_code == 200
    names = [s["name"] for s in response.json()["skills"]]
    assert names == ["hs-code-lookup", "market-analysis", "quotation-email"]


def test_get_skill_payload_shape(client):
    response = client.get("/v1/skills/market-analysis", params={"user_id": "fresh"})
    body = response.json()
    assert body["requires_sub_agent"] is True
    assert body["sub_agent"]["name"]
    assert body["maturity"] == "Budding"
    assert body["success_rate"] == 1.0
    assert "market analysis" in body["triggers"]


def test_get_skill_missing(client):
    assert client.get("/v1/skills/absent", params={"user_id": "u"}).status_code == 404


def test_put_creates_then_updates_preserving_meta(client):
    body = {
        "description": "books ocean freight",
        "triggers": ["book freight"],
        "instructions": "1. collect route",
    }
    created = client.put("/v1/skills/freight-booking", params={"user_id": "put-user"}, json=body)
    assert created.status_code == 201
    created_at = created.json()["created_at"]

    session = client.post("/v1/sessions", json={"user_id": "put-user"}).json()["session_id"]
    client.post(f"/v1/sessions/{session}/messages", json={"text": "book freight to Hamburg"})
    used = client.get("/v1/skills/freight-booking", params={"user_id": "put-user"}).json()
    assert used["usage_count"] == 1

    body["description"] = "books ocean and air freight"
    updated = client.put("/v1/skills/freight-booking", params={"user_id": "put-user"}, json=body)
    assert updated.status_code == 200
    assert updated.json()["usage_count"] == 1  # counters survive the edit
    assert updated.json()["created_at"] == created_at
    assert updated.json()["description"] == "books ocean and air freight"


def test_put_invalid_skill_rejected(client):
    response = client.put(
        "/v1/skills/bad-one",
        params={"user_id": "u"},
        json={"description": "", "triggers": ["x"]},
    )
    assert response.status_code == 400


def test_delete_skill(client):
    client.put(
        "/v1/skills/doomed",
        params={"user_id": "del-user"},
        json={"description": "d", "triggers": ["t"]},
    )
    assert client.delete("/v1/skills/doomed", params={"user_id": "del-user"}).status_code == 200
    assert client.get("/v1/skills/doomed", params={"user_id": "del-user"}).status_code == 404


def test_skills_are_per_user(client):
    client.put(
        "/v1/skills/private-skill",
        params={"user_id": "owner"},
        json={"description": "d", "triggers": ["t"]},
    )
    other = client.get("/v1/skills", params={"user_id": "someone-else"}).json()
    assert "private-skill" not in [s["name"] for s in other["skills"]]


# -- memory, suggestions, rewards ------------------------------------------

def test_memory_endpoint_excludes_soul(client, config):
    response = client.get("/v1/users/mem-user/memory")
    body = response.json()
    assert set(body) == {"user_id", "user_profile", "memory"}
    assert body["user_profile"].startswith("# USER")


def test_suggestions_flow_over_http(client, config, tmp_path):
    ws = init_workspace(config.data_root, "sug-user")
    record_observations(ws, "s1", [("Prefs", "- short answers")])
    record_observations(ws, "s2", [("Prefs", "- short answers")])
    listed = client.get("/v1/users/sug-user/suggestions").json()["suggestions"]
    assert len(listed) == 1
    suggestion_id = listed[0]["id"]

    response = client.post(
        f"/v1/suggestions/{suggestion_id}/confirm",
        json={"user_id": "sug-user", "accept": True},
    )
    assert response.status_code == 200
    memory = client.get("/v1/users/sug-user/memory").json()
    assert "- short answers" in memory["user_profile"]
    # consume-once
    again = client.post(
        f"/v1/suggestions/{suggestion_id}/confirm",
        json={"user_id": "sug-user", "accept": True},
    )
    assert again.status_code == 404


def test_rewards_endpoint(client, config):
    ws = init_workspace(config.data_root, "rw-user")
    append_reward(ws, compute_reward("s1", None, None, None))
    body = client.get("/v1/users/rw-user/rewards").json()
    assert body["gamma"] == config.gamma
    assert len(body["records"]) == 1
    assert body["cumulative"] == pytest.approx(0.0)


# -- auth and static console -----------------------------------------------

def test_bearer_auth(tmp_path, monkeypatch):
    monkeypatch.setenv("SVC_TEST_TOKEN", "sekrit")
    config = ApiConfig(data_root=str(tmp_path / "data"), auth_token_env="SVC_TEST_TOKEN")
    client = TestClient(create_app(config, SessionManager(config)))

    assert client.post("/v1/sessions", json={"user_id": "u"}).status_code == 401
    assert (
        client.post(
            "/v1/sessions",
            json={"user_id": "u"},
            headers={"Authorization": "Bearer wrong"},
        ).status_code
        == 401
    )
    assert (
        client.post(
            "/v1/sessions",
            json={"user_id": "u"},
            headers={"Authorization": "Bearer sekrit"},
        ).status_code
        == 200
    )


def test_auth_disabled_when_env_var_missing(tmp_path, monkeypatch):
    monkeypatch.delenv("SVC_TEST_TOKEN", raising=False)
    config = ApiConfig(data_root=str(tmp_path / "data"), auth_token_env="SVC_TEST_TOKEN")
    client = TestClient(create_app(config, SessionManager(config)))
    assert client.post("/v1/sessions", json={"user_id": "u"}).status_code == 200


def test_console_mount(tmp_path, config, manager):
    dist = tmp_path / "dist"
    dist.mkdir()
    (dist / "index.html").write_text("<html><body>console</body></html>")
    client = TestClient(create_app(config, manager, console_dist=dist))
    response = client.get("/console/")
    assert response.status_code == 200
    assert "console" in response.text


def test_console_absent_is_fine(tmp_path, config, manager):
    client = TestClient(create_app(config, manager, console_dist=tmp_path / "missing"))
    assert client.get("/console/").status_code == 404
