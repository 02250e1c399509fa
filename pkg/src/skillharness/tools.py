"""Tool definitions and the per-session tool registry.

A tool is a name, a description, a flat parameter schema, an effect class,
and a handler taking decoded arguments and returning result text. The
``skill_loader`` pseudo-tool is reserved: its call pairs are synthesized by
the context engine during skill injection and it can never be registered,
so a model cannot invoke it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator

import httpx

from .context import SKILL_LOADER_TOOL
from .workspace import (
    ProfileDelta,
    Provenance,
    SectionEdit,
    Workspace,
    apply_memory_delta,
    apply_profile_delta,
)


class ToolEffect(str, Enum):
    READ_ONLY = "read_only"
    WORKSPACE_WRITE = "workspace_write"
    EXTERNAL_CALL = "external_call"


@dataclass(frozen=True)
class ToolParameter:
    name: str
    type: str = "string"
    description: str = ""
    required: bool = True


@dataclass(frozen=True)
class ToolDefinition:
    name: str
    description: str
    parameter_schema: tuple[ToolParameter, ...]
    effect: ToolEffect
    handler: Callable[[dict], str] = field(compare=False)

    def run(self, arguments_json: str) -> str:
        """Decode arguments, check required parameters, call the handler.
        Raises ToolExecutionError with a model-readable message on failure."""
        try:
            decoded = json.loads(arguments_json) if arguments_json.strip() else {}
        except json.JSONDecodeError as exc:
            raise ToolExecutionError(f"arguments are not valid JSON: {exc}") from exc
        if not isinstance(decoded, dict):
            raise ToolExecutionError("arguments must decode to an object")
        missing = [
            p.name for p in self.parameter_schema if p.required and p.name not in decoded
        ]
        if missing:
            raise ToolExecutionError(f"missing required parameters: {', '.join(missing)}")
        try:
            return self.handler(decoded)
        except ToolExecutionError:
            raise
        except Exception as exc:  # handler bugs become tool errors, not crashes
            raise ToolExecutionError(f"tool failed: {exc}") from exc


class ToolExecutionError(Exception):
    """Raised by a tool handler; surfaced to the model as a structured
    error result so the loop can continue."""


class ToolRegistry:
    def __init__(self, tools: Iterable[ToolDefinition] = ()):
        self._tools: dict[str, ToolDefinition] = {}
        for tool in tools:
            self.register(tool)

    def register(self, tool: ToolDefinition) -> None:
        if tool.name == SKILL_LOADER_TOOL:
            raise ValueError(f"{SKILL_LOADER_TOOL} is synthetic and cannot be registered")
        if tool.name in self._tools:
            raise ValueError(f"duplicate tool name {tool.name!r}")
        self._tools[tool.name] = tool

    def get(self, name: str) -> ToolDefinition | None:
        return self._tools.get(name)

    def names(self) -> list[str]:
        return list(self._tools)

    def definitions(self) -> list[ToolDefinition]:
        return list(self._tools.values())

    def subset(self, names: Iterable[str]) -> "ToolRegistry":
        """Restricted registry for sub-agent delegation; unknown names raise
        KeyError so misconfiguration fails before any provider call."""
        picked = []
        for name in names:
            if name not in self._tools:
                raise KeyError(name)
            picked.append(self._tools[name])
        return ToolRegistry(picked)

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def __len__(self) -> int:
        return len(self._tools)

    def __iter__(self) -> Iterator[ToolDefinition]:
        return iter(self._tools.values())


# -- built-in workspace tools ----------------------------------------------

_SECTION_PARAMS = (
    ToolParameter("section", description="Markdown section heading to edit"),
    ToolParameter("content", description="Markdown fragment to write"),
    ToolParameter(
        "mode",
        description="'add' appends under the section, 'replace' rewrites it",
        required=False,
    ),
)


def _edit_from_args(args: dict) -> ProfileDelta:
    edit = SectionEdit(heading=str(args["section"]), fragment=str(args["content"]))
    if args.get("mode", "add") == "replace":
        return ProfileDelta(replacements=(edit,), provenance=Provenance.REAL_TIME)
    return ProfileDelta(additions=(edit,), provenance=Provenance.REAL_TIME)


def update_user_profile_tool(ws: Workspace) -> ToolDefinition:
    def handler(args: dict) -> str:
        delta = _edit_from_args(args)
        apply_profile_delta(ws, delta)
        return f"profile updated: section {args['section']!r}"

    return ToolDefinition(
        name="update_user_profile",
        description=(
            "Record a fact the user explicitly stated about themselves or "
            "their business in the persistent user profile."
        ),
        parameter_schema=_SECTION_PARAMS,
        effect=ToolEffect.WORKSPACE_WRITE,
        handler=handler,
    )


def update_memory_tool(ws: Workspace) -> ToolDefinition:
    def handler(args: dict) -> str:
        delta = _edit_from_args(args)
        apply_memory_delta(ws, delta)
        return f"memory updated: section {args['section']!r}"

    return ToolDefinition(
        name="update_memory",
        description="Store a durable fact or decision in long-term memory.",
        parameter_schema=_SECTION_PARAMS,
        effect=ToolEffect.WORKSPACE_WRITE,
        handler=handler,
    )


def builtin_registry(ws: Workspace) -> ToolRegistry:
    return ToolRegistry([update_user_profile_tool(ws), update_memory_tool(ws)])


# -- operator-declared HTTP tools ------------------------------------------

def http_tool(
    name: str,
    description: str,
    url: str,
    parameters: Iterable[ToolParameter] = (),
    timeout: float = 30.0,
) -> ToolDefinition:
    """External tool that POSTs its decoded arguments as JSON and returns
    the response body text."""

    def handler(args: dict) -> str:
        try:
            response = httpx.post(url, json=args, timeout=timeout)
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise ToolExecutionError(f"http tool {name} failed: {exc}") from exc
        return response.text

    return ToolDefinition(
        name=name,
        description=description,
        parameter_schema=tuple(parameters),
        effect=ToolEffect.EXTERNAL_CALL,
        handler=handler,
    )
