from __future__ import annotations

import os
from datetime import timedelta
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillharness.errors import MalformedSkill, SkillNotFound, StoreUnavailable
from skillharness.skills import (
    MaturityLevel,
    Skill,
    SkillMeta,
    SubAgentSpec,
    classify_maturity,
    load_store,
    maturity_level,
    parse_skill,
    write_skill,
)

from .conftest import FIXED_TS, make_meta, make_skill, seed_store

MINIMAL = """---
name: {name}
description: a minimal skill
triggers:
- minimal
---
"""


def write_raw(tmp_path: Path, name: str, text: str) -> Path:
    skill_dir = tmp_path / "configs" / "skills" / name
    skill_dir.mkdir(parents=True)
    (skill_dir / "SKILL.md").write_text(text, encoding="utf-8")
    return skill_dir


# -- load_store ------------------------------------------------------------

def test_empty_store(tmp_path):
    (tmp_path / "configs" / "skills").mkdir(parents=True)
    store = load_store(tmp_path)
    assert len(store) == 0
    assert store.warnings == []


def test_missing_skills_dir_is_empty(tmp_path):
    assert len(load_store(tmp_path)) == 0


def test_missing_workspace_root_unavailable(tmp_path):
    with pytest.raises(StoreUnavailable):
        load_store(tmp_path / "nope")


def test_iteration_order_is_ascending_name(tmp_path):
    write_raw(tmp_path, "b", MINIMAL.format(name="b"))
    write_raw(tmp_path, "a", MINIMAL.format(name="a"))
    store = load_store(tmp_path)
    assert store.names() == ["a", "b"]
    assert [s.name for s in store.skills()] == ["a", "b"]


def test_malformed_skill_skipped_with_warning(tmp_path):
    write_raw(tmp_path, "good", MINIMAL.format(name="good"))
    write_raw(tmp_path, "bad", "---\nname: bad\ndescription: unclosed front matter\n")
    store = load_store(tmp_path)
    assert store.names() == ["good"]
    assert len(store.warnings) == 1
    assert store.warnings[0][0] == "bad"


# -- parse_skill -----------------------------------------------------------

def test_parse_minimal(tmp_path):
    skill_dir = write_raw(tmp_path, "mini", MINIMAL.format(name="mini"))
    skill = parse_skill(skill_dir)
    assert skill.name == "mini"
    assert skill.instr == ""
    assert skill.triggers == ("minimal",)
    assert skill.meta.usage_count == 0
    assert skill.meta.success_rate == 1.0


def test_parse_missing_skill_md(tmp_path):
    empty = tmp_path / "configs" / "skills" / "void"
    empty.mkdir(parents=True)
    with pytest.raises(SkillNotFound):
        parse_skill(empty)


def test_parse_missing_mandatory_fields(tmp_path):
    skill_dir = write_raw(tmp_path, "anon", "---\ntriggers:\n- t\n---\nbody")
    with pytest.raises(MalformedSkill):
        parse_skill(skill_dir)


def test_parse_negative_usage_count(tmp_path):
    text = (
        "---\nname: neg\ndescription: d\ntriggers:\n- t\n"
        "metadata:\n  usage_count: -1\n---\n"
    )
    skill_dir = write_raw(tmp_path, "neg", text)
    with pytest.raises(MalformedSkill):
        parse_skill(skill_dir)


def test_parse_invalid_timestamp(tmp_path):
    text = (
        "---\nname: ts\ndescription: d\ntriggers:\n- t\n"
        "metadata:\n  created_at: 'not a time'\n---\n"
    )
    skill_dir = write_raw(tmp_path, "ts", text)
    with pytest.raises(MalformedSkill):
        parse_skill(skill_dir)


def test_references_enumerated_but_not_read(tmp_path, monkeypatch):
    skill_dir = write_raw(tmp_path, "refy", MINIMAL.format(name="refy"))
    refs = skill_dir / "references"
    refs.mkdir()
    (refs / "pricing.md").write_text("secret pricing", encoding="utf-8")
    (refs / "hs_codes.md").write_text("secret codes", encoding="utf-8")

    reads: list[str] = []
    original = Path.read_text

    def counting_read_text(self, *args, **kwargs):
        reads.append(self.name)
        return original(self, *args, **kwargs)

    monkeypatch.setattr(Path, "read_text", counting_read_text)
    skill = parse_skill(skill_dir)
    assert skill.refs == {
        "hs_codes.md": "references/hs_codes.md",
        "pricing.md": "references/pricing.md",
    }
    assert reads == ["SKILL.md"]


# -- save_skill ------------------------------------------------------------

def test_round_trip_with_sub_agent_and_refs(tmp_path):
    skill_dir = tmp_path / "configs" / "skills" / "delegator"
    skill = make_skill(
        "delegator",
        triggers=("delegate", "Hand Off"),
        instr="# Steps\n\nDo the thing.\n",
        requires_sub_agent=True,
        sub_agent=SubAgentSpec(name="helper", instructions="help out", tool_names=("a", "b")),
    )
    write_skill(skill, skill_dir)
    refs = skill_dir / "references"
    refs.mkdir()
    (refs / "notes.md").write_text("n", encoding="utf-8")
    parsed = parse_skill(skill_dir)
    expected = Skill(**{**skill.__dict__, "refs": {"notes.md": "references/notes.md"}})
    assert parsed == expected


def test_save_name_directory_mismatch(tmp_path):
    with pytest.raises(MalformedSkill):
        write_skill(make_skill("right"), tmp_path / "wrong")


def test_crash_between_write_and_rename_keeps_old_file(tmp_path, monkeypatch):
    skill_dir = tmp_path / "configs" / "skills" / "crashy"
    original_skill = make_skill("crashy", desc="original description")
    write_skill(original_skill, skill_dir)
    before = (skill_dir / "SKILL.md").read_text(encoding="utf-8")

    def exploding_replace(src, dst):
        raise OSError("simulated crash before rename")

    monkeypatch.setattr(os, "replace", exploding_replace)
    with pytest.raises(StoreUnavailable):
        write_skill(make_skill("crashy", desc="new description"), skill_dir)
    monkeypatch.undo()
    assert (skill_dir / "SKILL.md").read_text(encoding="utf-8") == before
    assert not list(skill_dir.glob("*.tmp"))


valid_name = st.from_regex(r"[a-z0-9][a-z0-9-]{0,18}", fullmatch=True)
sane_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc"), max_codepoint=0x2FFF),
    min_size=1,
    max_size=60,
)
# Text-mode IO normalizes CR to LF, so bodies with bare carriage returns are
# not representable on disk; the property sticks to LF line endings.
body_text = st.text(
    alphabet=st.characters(
        blacklist_categories=("Cs", "Cc"), whitelist_characters="\n", max_codepoint=0x2FFF
    ),
    max_size=200,
)
trigger = sane_text.filter(lambda t: t.strip())
timestamps = st.integers(min_value=0, max_value=3 * 10**9).map(
    lambda s: FIXED_TS + timedelta(seconds=s % 10**9)
)


@st.composite
def valid_skills(draw) -> Skill:
    usage = draw(st.integers(min_value=0, max_value=50))
    created = draw(timestamps)
    meta = SkillMeta(
        created_at=created,
        updated_at=created + timedelta(seconds=draw(st.integers(0, 10**6))),
        usage_count=usage,
        success_count=draw(st.integers(min_value=0, max_value=usage)),
    )
    requires_sub = draw(st.booleans())
    sub_agent = None
    if requires_sub:
        sub_agent = SubAgentSpec(
            name=draw(valid_name),
            instructions=draw(sane_text),
            tool_names=tuple(draw(st.lists(valid_name, max_size=3, unique=True))),
        )
    return Skill(
        name=draw(valid_name),
        desc=draw(sane_text),
        triggers=tuple(
            draw(st.lists(trigger, max_size=4, unique_by=lambda t: t.lower()))
        ),
        instr=draw(body_text),
        requires_sub_agent=requires_sub,
        sub_agent=sub_agent,
        meta=meta,
    )


@settings(max_examples=100, deadline=None)
@given(skill=valid_skills())
def test_save_parse_round_trip_property(tmp_path_factory, skill):
    base = tmp_path_factory.mktemp("roundtrip")
    skill_dir = base / skill.name
    write_skill(skill, skill_dir)
    assert parse_skill(skill_dir) == skill


# -- record_usage ----------------------------------------------------------

def test_record_usage_first_success(store):
    seed_store(store, make_skill("fresh"))
    meta = store.record_usage("fresh", success=True)
    assert (meta.usage_count, meta.success_count) == (1, 1)
    assert meta.success_rate == 1.0


def test_record_usage_failure_arithmetic(store):
    seed_store(store, make_skill("veteran", meta=make_meta(usage=9, success=9)))
    meta = store.record_usage("veteran", success=False)
    assert (meta.usage_count, meta.success_count) == (10, 9)
    assert meta.success_rate == pytest.approx(0.9)


def test_record_usage_unknown_skill(store):
    with pytest.raises(SkillNotFound):
        store.record_usage("ghost", success=True)


def test_record_usage_persists(store, tmp_path):
    seed_store(store, make_skill("durable"))
    store.record_usage("durable", success=True)
    reparsed = parse_skill(store.root / "durable")
    assert reparsed.meta.usage_count == 1


def test_usage_event_replay_reproduces_meta(store):
    seed_store(store, make_skill("replayed"))
    events = [True, False, True, True, False, True]
    for success in events:
        store.record_usage("replayed", success)
    meta = store.get("replayed").meta
    assert meta.usage_count == len(events)
    assert meta.success_count == sum(events)


def test_amend_success_clamps(store):
    seed_store(store, make_skill("amend", meta=make_meta(usage=2, success=2)))
    assert store.amend_success("amend", +1).success_count == 2
    assert store.amend_success("amend", -1).success_count == 1
    assert store.amend_success("amend", -5).success_count == 0


# -- maturity --------------------------------------------------------------

@pytest.mark.parametrize(
    "usage,rate,expected",
    [
        (10, 0.85, MaturityLevel.PROFICIENT),
        (4, 0.7, MaturityLevel.MATURE),
        (0, 1.0, MaturityLevel.BUDDING),
        (12, 0.5, MaturityLevel.GROWING),
        (1, 0.0, MaturityLevel.GROWING),
        (9, 1.0, MaturityLevel.MATURE),
        (10, 0.84, MaturityLevel.MATURE),
        (3, 1.0, MaturityLevel.GROWING),
    ],
)
def test_maturity_thresholds(usage, rate, expected):
    assert maturity_level(usage, rate) is expected


def test_classify_maturity_from_meta():
    assert classify_maturity(make_meta(usage=10, success=9)) is MaturityLevel.PROFICIENT
    assert classify_maturity(make_meta(usage=0, success=0)) is MaturityLevel.BUDDING


@given(
    usage=st.integers(min_value=0, max_value=40),
    rate=st.floats(min_value=0.0, max_value=1.0),
    bump=st.integers(min_value=0, max_value=10),
)
def test_maturity_monotone_in_usage(usage, rate, bump):
    assert maturity_level(usage + bump, rate) >= maturity_level(usage, rate)


@given(
    usage=st.integers(min_value=0, max_value=40),
    rate=st.floats(min_value=0.0, max_value=1.0),
    lift=st.floats(min_value=0.0, max_value=1.0),
)
def test_maturity_monotone_in_rate(usage, rate, lift):
    higher = min(rate + lift, 1.0)
    assert maturity_level(usage, higher) >= maturity_level(usage, rate)


# -- invariants ------------------------------------------------------------

def test_success_count_cannot_exceed_usage():
    with pytest.raises(MalformedSkill):
        make_skill("broken", meta=make_meta(usage=1, success=2)).validate()


def test_duplicate_triggers_rejected():
    with pytest.raises(MalformedSkill):
        make_skill("dup", triggers=("Quote", "quote")).validate()


def test_ref_escaping_skill_dir_rejected():
    skill = make_skill("escape")
    object.__setattr__(skill, "refs", {"evil": "../outside.md"})
    with pytest.raises(MalformedSkill):
        skill.validate()
