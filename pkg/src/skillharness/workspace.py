"""Per-user workspace: the three memory documents and their merge rules.

Layout under ``{data_root}/{user_id}/``: SOUL.md (operator-edited charter),
USER.md (profile), MEMORY.md (long-term facts), ``configs/skills/`` and
``sessions/``. Profile and memory updates are section-level Markdown merges
so hand edits survive evolution passes.
"""

from __future__ import annotations

import os
import re
import shutil
import tempfile
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import ConfirmationRequired, InvalidUserId, StoreUnavailable

USER_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")

SOUL_FILE = "SOUL.md"
USER_FILE = "USER.md"
MEMORY_FILE = "MEMORY.md"
SESSIONS_DIR = "sessions"
SKILLS_DIR = Path("configs") / "skills"

# Sentinel distinguishing an untouched template from user content.
TEMPLATE_MARKER = "<!-- skillharness:template -->"


class Provenance(str, Enum):
    REAL_TIME = "real_time"
    INITIAL_GUIDANCE = "initial_guidance"
    POST_SESSION = "post_session"
    BEHAVIOR_SUGGESTION = "behavior_suggestion"


@dataclass(frozen=True)
class SectionEdit:
    heading: str
    fragment: str


@dataclass(frozen=True)
class ProfileDelta:
    additions: tuple[SectionEdit, ...] = ()
    replacements: tuple[SectionEdit, ...] = ()
    provenance: Provenance = Provenance.POST_SESSION
    confirmed: bool = False

    @property
    def empty(self) -> bool:
        return not self.additions and not self.replacements

    @property
    def char_count(self) -> int:
        """Size of the applied fragments; feeds reward telemetry."""
        return sum(len(e.fragment) for e in self.additions + self.replacements)


@dataclass(frozen=True)
class Workspace:
    user_id: str
    root: Path

    @property
    def soul_path(self) -> Path:
        return self.root / SOUL_FILE

    @property
    def user_path(self) -> Path:
        return self.root / USER_FILE

    @property
    def memory_path(self) -> Path:
        return self.root / MEMORY_FILE

    @property
    def sessions_dir(self) -> Path:
        return self.root / SESSIONS_DIR

    @property
    def skills_root(self) -> Path:
        return self.root / SKILLS_DIR

    def soul(self) -> str:
        return self.soul_path.read_text(encoding="utf-8")

    def user_profile(self) -> str:
        return self.user_path.read_text(encoding="utf-8")

    def memory(self) -> str:
        return self.memory_path.read_text(encoding="utf-8")

    def profile_snapshot(self) -> str:
        """USER.md + MEMORY.md, the ``u`` component of session state."""
        return f"{self.user_profile()}\n{self.memory()}"


def _templates_root():
    return resources.files("skillharness") / "templates"


def init_workspace(data_root: Path, user_id: str) -> Workspace:
    """Create (or return) the workspace for ``user_id``.

    Fresh workspaces get the three memory documents from templates plus the
    default skill set. Re-init of an existing workspace is a no-op: nothing
    is overwritten.
    """
    if not USER_ID_RE.match(user_id or ""):
        raise InvalidUserId(f"user id {user_id!r} must match [A-Za-z0-9_-]{{1,64}}")
    root = Path(data_root) / user_id
    ws = Workspace(user_id=user_id, root=root)
    templates = _templates_root()
    try:
        root.mkdir(parents=True, exist_ok=True)
        for name in (SOUL_FILE, USER_FILE, MEMORY_FILE):
            target = root / name
            if not target.exists():
                target.write_text(
                    (templates / name).read_text(encoding="utf-8"), encoding="utf-8"
                )
        skills_root = ws.skills_root
        if not skills_root.exists():
            skills_root.mkdir(parents=True)
            _copy_default_skills(skills_root)
        ws.sessions_dir.mkdir(exist_ok=True)
    except OSError as exc:
        raise StoreUnavailable(f"cannot initialize workspace {root}: {exc}") from exc
    return ws


def _copy_default_skills(skills_root: Path) -> None:
    defaults = _templates_root() / "default_skills"
    if not defaults.is_dir():
        return
    for entry in defaults.iterdir():
        if entry.is_dir():
            with resources.as_file(entry) as source:
                shutil.copytree(source, skills_root / entry.name)


# -- section-level Markdown merge ------------------------------------------

def split_sections(text: str) -> tuple[list[str], list[tuple[str, list[str]]]]:
    """Split into (preamble lines, [(heading, block lines incl. heading)]).

    Sections are ``## `` blocks; joining preamble + blocks reproduces the
    input byte-for-byte.
    """
    preamble: list[str] = []
    blocks: list[tuple[str, list[str]]] = []
    current: list[str] | None = None
    for line in text.split("\n"):
        if line.startswith("## "):
            current = [line]
            blocks.append((line[3:].strip(), current))
        elif current is None:
            preamble.append(line)
        else:
            current.append(line)
    return preamble, blocks


def _render(preamble: list[str], blocks: list[tuple[str, list[str]]]) -> str:
    lines = list(preamble)
    for _, block in blocks:
        lines.extend(block)
    return "\n".join(lines)


def merge_sections(text: str, delta: ProfileDelta) -> str:
    """Apply additions and replacements; sections not named in the delta are
    byte-identical in the result."""
    preamble, blocks = split_sections(text)
    by_heading = {heading: block for heading, block in blocks}

    for edit in delta.replacements:
        if edit.heading in by_heading:
            block = by_heading[edit.heading]
            block[1:] = edit.fragment.split("\n") + [""]
        else:
            block = [f"## {edit.heading}"] + edit.fragment.split("\n") + [""]
            blocks.append((edit.heading, block))
            by_heading[edit.heading] = block

    for edit in delta.additions:
        if edit.heading in by_heading:
            block = by_heading[edit.heading]
            while len(block) > 1 and block[-1] == "":
                block.pop()
            block.extend(edit.fragment.split("\n") + [""])
        else:
            block = [f"## {edit.heading}"] + edit.fragment.split("\n") + [""]
            blocks.append((edit.heading, block))
            by_heading[edit.heading] = block

    return _render(preamble, blocks)


def _atomic_write(path: Path, content: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}-", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as handle:
        handle.write(content)
    os.replace(tmp, path)


def _apply_delta(path: Path, delta: ProfileDelta, drop_marker: bool) -> None:
    if delta.provenance is Provenance.BEHAVIOR_SUGGESTION and not delta.confirmed:
        raise ConfirmationRequired("behavior suggestions apply only after confirmation")
    if delta.empty:
        return
    text = path.read_text(encoding="utf-8")
    merged = merge_sections(text, delta)
    if drop_marker and TEMPLATE_MARKER in merged:
        merged = "\n".join(
            line for line in merged.split("\n") if line.strip() != TEMPLATE_MARKER
        )
    _atomic_write(path, merged)


def apply_profile_delta(ws: Workspace, delta: ProfileDelta) -> Workspace:
    """Merge the delta into USER.md only; other layers are never touched."""
    _apply_delta(ws.user_path, delta, drop_marker=True)
    return ws


def apply_memory_delta(ws: Workspace, delta: ProfileDelta) -> Workspace:
    """Merge the delta into MEMORY.md only."""
    _apply_delta(ws.memory_path, delta, drop_marker=False)
    return ws


def needs_initial_guidance(ws: Workspace) -> bool:
    """True while USER.md still carries the template sentinel, i.e. no
    user-derived content has ever been applied."""
    return TEMPLATE_MARKER in ws.user_profile()
