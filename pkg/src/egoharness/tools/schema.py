"""Tool schemas and the per-scenario registry.

Schema files use the function-schema shape::

    {"type": "function",
     "function": {"tool_name": ..., "description": ..., "parameters": {...}}}

Two harness-only annotations are understood and stripped before schemas are
shown to an agent: ``x-kind`` on the function object (READ/WRITE/CALC) and
``x-unordered`` on array parameters (compared as multisets when matching).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from jsonschema import Draft202012Validator

from ..errors import DuplicateTool, SchemaError, UnknownTool


class ToolKind(str, Enum):
    READ = "READ"
    WRITE = "WRITE"
    CALC = "CALC"


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str
    required: bool
    constraints: dict[str, Any] = field(default_factory=dict)
    description: str = ""
    unordered: bool = False


@dataclass(frozen=True)
class ToolSchema:
    tool_name: str
    description: str
    parameters: tuple[ParamSpec, ...]
    kind: ToolKind
    json_schema: dict[str, Any]

    @property
    def required(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parameters if p.required)

    def param(self, name: str) -> ParamSpec | None:
        return next((p for p in self.parameters if p.name == name), None)

    def unordered_params(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parameters if p.unordered)

    def document(self) -> dict[str, Any]:
        """The schema as shown to an agent, harness annotations removed."""
        return {
            "type": "function",
            "function": {
                "tool_name": self.tool_name,
                "description": self.description,
                "parameters": _strip_annotations(self.json_schema),
            },
        }


def _strip_annotations(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _strip_annotations(v) for k, v in value.items() if not k.startswith("x-")}
    if isinstance(value, list):
        return [_strip_annotations(v) for v in value]
    return value


def parse_tool_schema(doc: Any, kind: ToolKind | str | None = None) -> ToolSchema:
    if not isinstance(doc, dict) or not isinstance(doc.get("function"), dict):
        raise SchemaError("tool schema must be an object with a 'function' object")
    fn = doc["function"]
    name = fn.get("tool_name") or fn.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError("tool schema missing tool_name")
    params = fn.get("parameters", {"type": "object", "properties": {}})
    if not isinstance(params, dict) or params.get("type", "object") != "object":
        raise SchemaError(f"{name}: parameters must be an object schema")
    props = params.get("properties", {})
    required = params.get("required", [])
    if not isinstance(props, dict) or not isinstance(required, list):
        raise SchemaError(f"{name}: malformed properties/required")
    missing = [r for r in required if r not in props]
    if missing:
        raise SchemaError(f"{name}: required parameters without a declared type: {missing}")
    specs = []
    for pname, pschema in props.items():
        if not isinstance(pschema, dict) or "type" not in pschema:
            raise SchemaError(f"{name}.{pname}: parameter has no declared type")
        constraints = {
            k: v for k, v in pschema.items() if k not in ("type", "description") and not k.startswith("x-")
        }
        specs.append(
            ParamSpec(
                name=pname,
                type=pschema["type"],
                required=pname in required,
                constraints=constraints,
                description=pschema.get("description", ""),
                unordered=bool(pschema.get("x-unordered", False)),
            )
        )
    declared = fn.get("x-kind")
    chosen = kind if kind is not None else declared
    if chosen is None:
        raise SchemaError(f"{name}: tool kind unknown")
    try:
        chosen = ToolKind(chosen)
        if declared is not None and ToolKind(declared) is not chosen:
            raise SchemaError(f"{name}: declared kind {declared} disagrees with handler kind {chosen.value}")
    except ValueError:
        raise SchemaError(f"{name}: unknown tool kind {chosen!r}") from None
    return ToolSchema(
        tool_name=name,
        description=fn.get("description", ""),
        parameters=tuple(specs),
        kind=chosen,
        json_schema=copy.deepcopy(params),
    )


Handler = Callable[..., Any]


class ToolRegistry:
    """Immutable mapping from tool name to schema, validator and handler."""

    def __init__(
        self,
        schemas: Iterable[ToolSchema],
        handlers: Mapping[str, Handler] | None = None,
    ) -> None:
        self._schemas: dict[str, ToolSchema] = {}
        self._validators: dict[str, Draft202012Validator] = {}
        self._handlers: dict[str, Handler] = {}
        handlers = handlers or {}
        for schema in schemas:
            key = schema.tool_name.lower()
            if key in self._schemas:
                raise DuplicateTool(f"duplicate tool {schema.tool_name!r}")
            self._schemas[key] = schema
            self._validators[key] = Draft202012Validator(_strip_annotations(schema.json_schema))
            if schema.tool_name in handlers:
                self._handlers[key] = handlers[schema.tool_name]

    def __len__(self) -> int:
        return len(self._schemas)

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and name.lower() in self._schemas

    def __iter__(self):
        return iter(self._schemas.values())

    def names(self) -> list[str]:
        return [s.tool_name for s in self._schemas.values()]

    def get(self, name: str) -> ToolSchema:
        try:
            return self._schemas[name.lower()]
        except KeyError:
            raise UnknownTool(f"unknown tool {name!r}") from None

    def kind(self, name: str) -> ToolKind | None:
        schema = self._schemas.get(name.lower())
        return schema.kind if schema else None

    def validator(self, name: str) -> Draft202012Validator:
        return self._validators[self.get(name).tool_name.lower()]

    def handler(self, name: str) -> Handler | None:
        return self._handlers.get(name.lower())

    def documents(self) -> list[dict[str, Any]]:
        return [s.document() for s in self._schemas.values()]

    def read_tools(self) -> list[str]:
        return [s.tool_name for s in self._schemas.values() if s.kind is ToolKind.READ]

    def unordered_params(self) -> dict[str, list[str]]:
        return {
            s.tool_name: list(s.unordered_params())
            for s in self._schemas.values()
            if s.unordered_params()
        }


def register_toolset(
    schemas: Iterable[ToolSchema], handlers: Mapping[str, Handler] | None = None
) -> ToolRegistry:
    schemas = list(schemas)
    if not schemas:
        raise SchemaError("a toolset needs at least one tool")
    return ToolRegistry(schemas, handlers)


def load_tool_schemas(path: str | Path, kinds: Mapping[str, ToolKind] | None = None) -> list[ToolSchema]:
    try:
        docs = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(docs, list):
        raise SchemaError(f"{path}: expected a JSON list of tool schemas")
    kinds = kinds or {}
    out = []
    for doc in docs:
        name = doc.get("function", {}).get("tool_name") if isinstance(doc, dict) else None
        out.append(parse_tool_schema(doc, kinds.get(name) if name else None))
    return out
