"""Skill packages on disk: parsing, persistence, usage metadata, and maturity.

A skill lives at ``configs/skills/{name}/SKILL.md``: YAML front matter
between ``---`` lines, then a Markdown instruction body. Reference files
under ``references/`` are enumerated but never read until requested
(lazy loading).
"""

from __future__ import annotations

import logging
import os
import re
import shutil
import tempfile
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import IntEnum
from pathlib import Path

import yaml

from .errors import MalformedSkill, SkillNotFound, StoreUnavailable

logger = logging.getLogger(__name__)

SLUG_RE = re.compile(r"^[a-z0-9-]+$")
SKILL_FILE = "SKILL.md"
REFS_DIR = "references"
SKILLS_SUBDIR = Path("configs") / "skills"


def utc_now() -> datetime:
    """Current UTC time truncated to second precision."""
    return datetime.now(timezone.utc).replace(microsecond=0)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(value: object) -> datetime:
    """Accept ISO-8601 strings (Z or offset) or YAML-parsed datetimes."""
    if isinstance(value, datetime):
        if value.tzinfo is None:
            return value.replace(tzinfo=timezone.utc, microsecond=0)
        return value.astimezone(timezone.utc).replace(microsecond=0)
    if isinstance(value, str):
        text = value.strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(text)
        except ValueError as exc:
            raise MalformedSkill(f"invalid timestamp: {value!r}") from exc
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.astimezone(timezone.utc).replace(microsecond=0)
    raise MalformedSkill(f"invalid timestamp: {value!r}")


class MaturityLevel(IntEnum):
    """Reliability grade of a skill, ordered from least to most proven."""

    BUDDING = 0
    GROWING = 1
    MATURE = 2
    PROFICIENT = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True)
class SkillMeta:
    """Evolutionary counters for one skill."""

    created_at: datetime
    updated_at: datetime
    usage_count: int = 0
    success_count: int = 0

    @property
    def success_rate(self) -> float:
        # A never-used skill counts as fully successful so its first
        # successful use can enter Growing without a divide-by-zero.
        if self.usage_count == 0:
            return 1.0
        return self.success_count / self.usage_count

    def validate(self) -> None:
        if self.usage_count < 0 or self.success_count < 0:
            raise MalformedSkill("usage_count and success_count must be non-negative")
        if self.success_count > self.usage_count:
            raise MalformedSkill("success_count exceeds usage_count")
        if self.updated_at < self.created_at:
            raise MalformedSkill("updated_at precedes created_at")

    @classmethod
    def fresh(cls) -> "SkillMeta":
        now = utc_now()
        return cls(created_at=now, updated_at=now)


@dataclass(frozen=True)
class SubAgentSpec:
    """Delegation target carried by skills that require a sub-agent."""

    name: str
    instructions: str
    tool_names: tuple[str, ...] = ()


@dataclass(frozen=True)
class Skill:
    """One structured capability unit."""

    name: str
    desc: str
    triggers: tuple[str, ...]
    instr: str = ""
    refs: dict[str, str] = field(default_factory=dict)
    requires_sub_agent: bool = False
    sub_agent: SubAgentSpec | None = None
    meta: SkillMeta = field(default_factory=SkillMeta.fresh)

    def validate(self) -> None:
        if not SLUG_RE.match(self.name):
            raise MalformedSkill(f"invalid skill name {self.name!r} (want [a-z0-9-]+)")
        if not self.desc:
            raise MalformedSkill("description must be non-empty")
        seen = set()
        for trigger in self.triggers:
            if not trigger or not trigger.strip():
                raise MalformedSkill("empty trigger")
            lowered = trigger.lower()
            if lowered in seen:
                raise MalformedSkill(f"duplicate trigger {trigger!r}")
            seen.add(lowered)
        for ref_name, ref_path in self.refs.items():
            path = Path(ref_path)
            if path.is_absolute() or ".." in path.parts:
                raise MalformedSkill(f"reference {ref_name!r} escapes the skill directory")
        if self.requires_sub_agent and self.sub_agent is None:
            raise MalformedSkill("requires_sub_agent set but no sub_agent block")
        self.meta.validate()


def maturity_level(usage_count: int, success_rate: float) -> MaturityLevel:
    """Threshold cascade over usage count and success rate."""
    if usage_count >= 10 and success_rate >= 0.85:
        return MaturityLevel.PROFICIENT
    if usage_count >= 4 and success_rate >= 0.7:
        return MaturityLevel.MATURE
    if usage_count >= 1:
        return MaturityLevel.GROWING
    return MaturityLevel.BUDDING


def classify_maturity(meta: SkillMeta) -> MaturityLevel:
    return maturity_level(meta.usage_count, meta.success_rate)


def _split_front_matter(text: str) -> tuple[str, str]:
    """Return (front matter YAML, body). Raises on absent/unclosed blocks."""
    lines = text.split("\n")
    if not lines or lines[0] != "---":
        raise MalformedSkill("SKILL.md must start with a --- front matter line")
    for idx in range(1, len(lines)):
        if lines[idx] == "---":
            return "\n".join(lines[1:idx]), "\n".join(lines[idx + 1 :])
    raise MalformedSkill("unclosed front matter block")


def _parse_meta(raw: object) -> SkillMeta:
    if raw is None:
        return SkillMeta.fresh()
    if not isinstance(raw, dict):
        raise MalformedSkill("metadata must be a mapping")
    usage = raw.get("usage_count", 0)
    success = raw.get("success_count", 0)
    if not isinstance(usage, int) or not isinstance(success, int):
        raise MalformedSkill("usage_count/success_count must be integers")
    now = utc_now()
    meta = SkillMeta(
        created_at=parse_timestamp(raw["created_at"]) if "created_at" in raw else now,
        updated_at=parse_timestamp(raw["updated_at"]) if "updated_at" in raw else now,
        usage_count=usage,
        success_count=success,
    )
    meta.validate()
    return meta


def _parse_sub_agent(raw: object) -> SubAgentSpec:
    if not isinstance(raw, dict) or not raw.get("name") or not raw.get("instructions"):
        raise MalformedSkill("sub_agent block needs name and instructions")
    tools = raw.get("tools", [])
    if not isinstance(tools, list) or any(not isinstance(t, str) for t in tools):
        raise MalformedSkill("sub_agent.tools must be a list of tool names")
    return SubAgentSpec(
        name=str(raw["name"]),
        instructions=str(raw["instructions"]),
        tool_names=tuple(tools),
    )


def _enumerate_refs(skill_dir: Path) -> dict[str, str]:
    refs_root = skill_dir / REFS_DIR
    if not refs_root.is_dir():
        return {}
    refs: dict[str, str] = {}
    for path in sorted(refs_root.rglob("*")):
        if path.is_file():
            rel = path.relative_to(refs_root).as_posix()
            refs[rel] = f"{REFS_DIR}/{rel}"
    return refs


def parse_skill(skill_dir: Path) -> Skill:
    """Parse one skill directory. References are listed, never read."""
    skill_dir = Path(skill_dir)
    skill_file = skill_dir / SKILL_FILE
    if not skill_file.is_file():
        raise SkillNotFound(f"no {SKILL_FILE} in {skill_dir}")
    front, body = _split_front_matter(skill_file.read_text(encoding="utf-8"))
    try:
        data = yaml.safe_load(front)
    except yaml.YAMLError as exc:
        raise MalformedSkill(f"front matter is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedSkill("front matter must be a mapping")
    name = data.get("name")
    desc = data.get("description")
    if not name or not desc:
        raise MalformedSkill("front matter must declare name and description")
    if name != skill_dir.name:
        raise MalformedSkill(
            f"skill name {name!r} does not match directory {skill_dir.name!r}"
        )
    raw_triggers = data.get("triggers") or []
    if not isinstance(raw_triggers, list):
        raise MalformedSkill("triggers must be a list")
    requires_sub_agent = bool(data.get("requires_sub_agent", False))
    sub_agent = None
    if data.get("sub_agent") is not None:
        sub_agent = _parse_sub_agent(data["sub_agent"])
    skill = Skill(
        name=str(name),
        desc=str(desc),
        triggers=tuple(str(t) for t in raw_triggers),
        instr=body,
        refs=_enumerate_refs(skill_dir),
        requires_sub_agent=requires_sub_agent,
        sub_agent=sub_agent,
        meta=_parse_meta(data.get("metadata")),
    )
    skill.validate()
    return skill


def skill_to_markdown(skill: Skill) -> str:
    """Render a skill back to SKILL.md text (front matter + body)."""
    front: dict[str, object] = {
        "name": skill.name,
        "description": skill.desc,
        "triggers": list(skill.triggers),
    }
    if skill.requires_sub_agent:
        front["requires_sub_agent"] = True
    if skill.sub_agent is not None:
        front["sub_agent"] = {
            "name": skill.sub_agent.name,
            "instructions": skill.sub_agent.instructions,
            "tools": list(skill.sub_agent.tool_names),
        }
    front["metadata"] = {
        "usage_count": skill.meta.usage_count,
        "success_count": skill.meta.success_count,
        "created_at": format_timestamp(skill.meta.created_at),
        "updated_at": format_timestamp(skill.meta.updated_at),
    }
    yaml_text = yaml.safe_dump(front, sort_keys=False, allow_unicode=True)
    return "".join(["---\n", yaml_text, "---\n", skill.instr])


def write_skill(skill: Skill, skill_dir: Path) -> None:
    """Atomically write SKILL.md: temp file in the same directory, then rename."""
    skill.validate()
    if skill.name != skill_dir.name:
        raise MalformedSkill(
            f"skill name {skill.name!r} does not match directory {skill_dir.name!r}"
        )
    try:
        skill_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=skill_dir, prefix=".skill-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(skill_to_markdown(skill))
            os.replace(tmp_path, skill_dir / SKILL_FILE)
        finally:
            if os.path.exists(tmp_path):
                os.unlink(tmp_path)
    except OSError as exc:
        raise StoreUnavailable(f"cannot write skill {skill.name}: {exc}") from exc


class SkillStore:
    """All skills under one workspace, iterated in ascending name order."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._skills: dict[str, Skill] = {}
        self.warnings: list[tuple[str, str]] = []

    # -- queries ----------------------------------------------------------

    def names(self) -> list[str]:
        return sorted(self._skills)

    def skills(self) -> list[Skill]:
        return [self._skills[name] for name in self.names()]

    def get(self, name: str) -> Skill:
        try:
            return self._skills[name]
        except KeyError:
            raise SkillNotFound(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._skills

    def __len__(self) -> int:
        return len(self._skills)

    # -- mutations (single writer per workspace) --------------------------

    def save(self, skill: Skill) -> None:
        write_skill(skill, self.root / skill.name)
        self._skills[skill.name] = skill

    def record_usage(self, name: str, success: bool) -> SkillMeta:
        """Increment usage counters and persist. The sole counter mutator
        apart from feedback amendments."""
        skill = self.get(name)
        now = max(utc_now(), skill.meta.created_at)
        meta = replace(
            skill.meta,
            usage_count=skill.meta.usage_count + 1,
            success_count=skill.meta.success_count + (1 if success else 0),
            updated_at=now,
        )
        updated = replace(skill, meta=meta)
        self.save(updated)
        return meta

    def amend_success(self, name: str, delta: int) -> SkillMeta:
        """Feedback correction: shift success_count by ±1 without touching
        usage_count. Clamped to [0, usage_count]."""
        skill = self.get(name)
        new_success = min(max(skill.meta.success_count + delta, 0), skill.meta.usage_count)
        meta = replace(
            skill.meta,
            success_count=new_success,
            updated_at=max(utc_now(), skill.meta.created_at),
        )
        self.save(replace(skill, meta=meta))
        return meta

    def delete(self, name: str) -> None:
        skill_dir = self.root / self.get(name).name
        try:
            shutil.rmtree(skill_dir)
        except OSError as exc:
            raise StoreUnavailable(f"cannot delete skill {name}: {exc}") from exc
        del self._skills[name]

    def reload(self) -> None:
        self._skills.clear()
        self.warnings.clear()
        if not self.root.exists():
            return
        try:
            entries = sorted(p for p in self.root.iterdir() if p.is_dir())
        except OSError as exc:
            raise StoreUnavailable(f"cannot list skill store {self.root}: {exc}") from exc
        for skill_dir in entries:
            try:
                skill = parse_skill(skill_dir)
            except (MalformedSkill, SkillNotFound) as exc:
                self.warnings.append((skill_dir.name, str(exc)))
                logger.warning("skipping skill %s: %s", skill_dir.name, exc)
                continue
            self._skills[skill.name] = skill


def load_store(workspace_root: Path) -> SkillStore:
    """Load every parseable skill under ``configs/skills/``.

    Malformed skill directories are skipped and reported via
    ``store.warnings``; only failure to list the root itself is fatal.
    """
    workspace_root = Path(workspace_root)
    if not workspace_root.exists():
        raise StoreUnavailable(f"workspace root {workspace_root} does not exist")
    store = SkillStore(workspace_root / SKILLS_SUBDIR)
    store.reload()
    return store
