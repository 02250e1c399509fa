from __future__ import annotations

import json
from pathlib import Path

import pytest

from skillharness.errors import ReplayError
from skillharness.replay import verify_log
from skillharness.soak import run_soak


@pytest.fixture(scope="module")
def soak_log(tmp_path_factory) -> Path:
    # One real session log with compressions, skill usage, and a final state.
    report = run_soak(tmp_path_factory.mktemp("soak"), turns=40, max_tokens=4096)
    assert report.ok, report.errors
    return Path(report.session_log)


def mutate(soak_log: Path, tmp_path: Path, fn) -> Path:
    lines = soak_log.read_text(encoding="utf-8").splitlines()
    out = tmp_path / "mutated.jsonl"
    out.write_text("\n".join(fn(lines)) + "\n", encoding="utf-8")
    return out


def find_line(lines, kind: str, nth: int = 0) -> int:
    hits = [i for i, line in enumerate(lines) if json.loads(line)["type"] == kind]
    return hits[nth]


def test_untampered_log_is_consistent(soak_log):
    report = verify_log(soak_log)
    assert report.ok
    assert report.divergences == []
    assert report.turns == 40
    assert report.compressions >= 1
    assert report.records > 80


def test_empty_log_is_trivially_consistent(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    report = verify_log(path)
    assert report.ok
    assert report.records == 0


def test_tampered_message_content_is_located(soak_log, tmp_path):
    def fn(lines):
        i = find_line(lines, "message")
        record = json.loads(lines[i])
        record["message"]["content"] = record["message"]["content"].upper() + " EDITED"
        lines[i] = json.dumps(record)
        return lines

    report = verify_log(mutate(soak_log, tmp_path, fn))
    assert not report.ok
    assert any("turn 0 digest mismatch" in d for d in report.divergences)


def test_deleted_message_is_detected(soak_log, tmp_path):
    def fn(lines):
        del lines[find_line(lines, "message", nth=1)]
        return lines

    report = verify_log(mutate(soak_log, tmp_path, fn))
    assert not report.ok


def test_tampered_skill_usage_breaks_final_meta(soak_log, tmp_path):
    def fn(lines):
        i = find_line(lines, "skill_usage")
        record = json.loads(lines[i])
        record["success"] = not record["success"]
        lines[i] = json.dumps(record)
        return lines

    report = verify_log(mutate(soak_log, tmp_path, fn))
    assert any("success_count" in d for d in report.divergences)


def test_tampered_compression_digest(soak_log, tmp_path):
    def fn(lines):
        i = find_line(lines, "compression")
        record = json.loads(lines[i])
        record["digest_after"] = "0" * 64
        lines[i] = json.dumps(record)
        return lines

    report = verify_log(mutate(soak_log, tmp_path, fn))
    assert any("post-compression digest mismatch" in d for d in report.divergences)


def test_tampered_final_history_len(soak_log, tmp_path):
    def fn(lines):
        i = find_line(lines, "final_state")
        record = json.loads(lines[i])
        record["history_len"] += 3
        lines[i] = json.dumps(record)
        return lines

    report = verify_log(mutate(soak_log, tmp_path, fn))
    assert any("final history length" in d for d in report.divergences)


def test_missing_final_state(soak_log, tmp_path):
    def fn(lines):
        return lines[: find_line(lines, "final_state")]

    report = verify_log(mutate(soak_log, tmp_path, fn))
    assert report.divergences == ["session_end present but final_state missing"]


def test_invalid_json_raises_with_line_number(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text('{"type": "session_end"}\nnot json at all\n', encoding="utf-8")
    with pytest.raises(ReplayError) as excinfo:
        verify_log(path)
    assert excinfo.value.line_number == 2
    assert "line 2" in str(excinfo.value)


def test_unknown_record_type_raises(tmp_path):
    path = tmp_path / "odd.jsonl"
    path.write_text('{"type": "mystery"}\n', encoding="utf-8")
    with pytest.raises(ReplayError, match="unknown record type"):
        verify_log(path)


def test_typeless_record_raises(tmp_path):
    path = tmp_path / "odd.jsonl"
    path.write_text('{"hello": 1}\n', encoding="utf-8")
    with pytest.raises(ReplayError, match="lacks a type"):
        verify_log(path)


def test_missing_file_raises(tmp_path):
    with pytest.raises(ReplayError, match="cannot read log"):
        verify_log(tmp_path / "absent.jsonl")
