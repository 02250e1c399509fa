from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path

import pytest

from skillharness.skills import Skill, SkillMeta, SkillStore, write_skill

FIXED_TS = datetime(2026, 1, 5, 0, 0, 0, tzinfo=timezone.utc)


def make_meta(usage: int = 0, success: int = 0) -> SkillMeta:
    return SkillMeta(
        created_at=FIXED_TS, updated_at=FIXED_TS, usage_count=usage, success_count=success
    )


def make_skill(name: str, desc: str | None = None, triggers=("alpha trigger",), **kwargs) -> Skill:
    return Skill(
        name=name,
        desc=desc or f"description of {name}",
        triggers=tuple(triggers),
        meta=kwargs.pop("meta", make_meta()),
        **kwargs,
    )


@pytest.fixture
def store(tmp_path: Path) -> SkillStore:
    root = tmp_path / "configs" / "skills"
    root.mkdir(parents=True)
    store = SkillStore(root)
    store.reload()
    return store


def seed_store(store: SkillStore, *skills: Skill) -> SkillStore:
    for skill in skills:
        write_skill(skill, store.root / skill.name)
    store.reload()
    return store


# One verdict line per acceptance criterion, printed after capture ends so
# they appear in any full-run log regardless of capture mode.
ACCEPTANCE_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
