"""Executing tool calls against a scenario database."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

from ..errors import InvalidParameter, MissingParameter, ToolError, ToolExecutionError
from ..store import ScenarioDatabase
from .calls import ToolCall, ToolResult
from .common import HANDLERS, ToolContext
from .schema import ToolKind, ToolRegistry, ToolSchema, load_tool_schemas, register_toolset


def handler_kinds() -> dict[str, ToolKind]:
    return {name: kind for name, (kind, _) in HANDLERS.items()}


def build_registry(schemas: Iterable[ToolSchema]) -> ToolRegistry:
    """Registry whose tools are bound to the built-in handlers by name."""
    return register_toolset(schemas, {name: fn for name, (_, fn) in HANDLERS.items()})


def load_toolset(path: str | Path) -> ToolRegistry:
    return build_registry(load_tool_schemas(path, handler_kinds()))


def check_parameters(call: ToolCall, registry: ToolRegistry) -> ToolSchema:
    schema = registry.get(call.tool_name)
    errors = list(registry.validator(call.tool_name).iter_errors(call.parameters))
    if not errors:
        return schema
    missing = [e for e in errors if e.validator == "required" and not e.absolute_path]
    if missing:
        names = sorted(set(schema.required) - set(call.parameters))
        raise MissingParameter(f"{schema.tool_name}: missing required parameter(s): {', '.join(names)}")
    first = min(errors, key=lambda e: (list(map(str, e.absolute_path)), e.message))
    where = ".".join(str(p) for p in first.absolute_path) or "parameters"
    raise InvalidParameter(f"{schema.tool_name}: invalid {where}: {first.message}")


def execute(
    db: ScenarioDatabase,
    call: ToolCall,
    registry: ToolRegistry,
    *,
    strict: bool = False,
    ctx: ToolContext | None = None,
) -> tuple[ToolResult, ScenarioDatabase]:
    """Run one call.  Writes are all-or-nothing: a failed write leaves ``db`` intact.

    Errors become ``status: error`` results; with ``strict`` they are raised.
    The returned database is ``db`` itself, updated in place.
    """
    ctx = ctx or ToolContext()
    try:
        schema = check_parameters(call, registry)
        handler = registry.handler(schema.tool_name)
        if handler is None:
            raise ToolExecutionError(f"{schema.tool_name}: no handler bound")
        if schema.kind is ToolKind.WRITE:
            work = db.copy()
            result = handler(work, dict(call.parameters), ctx)
            if result.ok:
                db.replace_contents(work)
        else:
            result = handler(db, dict(call.parameters), ctx)
    except ToolError as exc:
        if strict:
            raise
        return ToolResult.error(str(exc), exc.code), db
    return result, db


def execute_batch(
    db: ScenarioDatabase,
    calls: Iterable[ToolCall],
    registry: ToolRegistry,
    *,
    strict: bool = False,
    ctx: ToolContext | None = None,
) -> list[ToolResult]:
    """Sequential execution; each call sees the effects of earlier ones."""
    return [execute(db, call, registry, strict=strict, ctx=ctx)[0] for call in calls]


