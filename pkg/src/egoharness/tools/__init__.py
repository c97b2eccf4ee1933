"""Tool schemas, handlers and the execution engine."""

from __future__ import annotations

from . import dining, kitchen, retail, shared  # noqa: F401  (populate HANDLERS)
from .calls import ShapeError, ShapeFault, ToolCall, ToolResult, ToolStatus, validate_call_shape
from .common import HANDLERS, ToolContext
from .engine import build_registry, check_parameters, execute, execute_batch, handler_kinds, load_toolset
from .schema import ParamSpec, ToolKind, ToolRegistry, ToolSchema, load_tool_schemas, parse_tool_schema, register_toolset

__all__ = [
    "HANDLERS",
    "ParamSpec",
    "ShapeError",
    "ShapeFault",
    "ToolCall",
    "ToolContext",
    "ToolKind",
    "ToolRegistry",
    "ToolResult",
    "ToolSchema",
    "ToolStatus",
    "build_registry",
    "check_parameters",
    "execute",
    "execute_batch",
    "handler_kinds",
    "load_tool_schemas",
    "load_toolset",
    "parse_tool_schema",
    "register_toolset",
    "validate_call_shape",
]
