"""Tool calls, tool results and the call-shape check."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from ..errors import HarnessError


class ShapeFault(str, Enum):
    NO_CALL = "NO_CALL"
    NOT_A_RECORD = "NOT_A_RECORD"
    MISSING_FIELDS = "MISSING_FIELDS"


class ShapeError(HarnessError):
    def __init__(self, fault: ShapeFault, detail: str = "") -> None:
        super().__init__(f"{fault.value}: {detail}" if detail else fault.value)
        self.fault = fault
        self.detail = detail


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    parameters: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"tool_name": self.tool_name, "parameters": self.parameters}

    @classmethod
    def from_dict(cls, data: Any) -> "ToolCall":
        return validate_call_shape(data)


class ToolStatus(str, Enum):
    SUCCESS = "success"
    PARTIAL = "partial_success"
    ERROR = "error"


@dataclass
class ToolResult:
    """Outcome of one call.  ``payload`` is exactly what the agent sees."""

    status: ToolStatus
    payload: dict[str, Any]
    error_code: str | None = None

    @property
    def ok(self) -> bool:
        return self.status is not ToolStatus.ERROR

    @property
    def message(self) -> str:
        return str(self.payload.get("message", ""))

    def content(self) -> str:
        return json.dumps(self.payload, ensure_ascii=False)

    @classmethod
    def success(cls, payload: dict[str, Any]) -> "ToolResult":
        return cls(ToolStatus.SUCCESS, payload)

    @classmethod
    def error(cls, message: str, code: str = "EXECUTION_ERROR") -> "ToolResult":
        return cls(ToolStatus.ERROR, {"status": "error", "message": message}, code)


def validate_call_shape(raw: Any) -> ToolCall:
    """Accept only ``{"tool_name": str, "parameters": dict}`` records."""
    if raw is None:
        raise ShapeError(ShapeFault.NO_CALL, "no tool call emitted")
    if not isinstance(raw, dict):
        raise ShapeError(ShapeFault.NOT_A_RECORD, f"got {type(raw).__name__}")
    name = raw.get("tool_name")
    if not isinstance(name, str) or not name.strip():
        raise ShapeError(ShapeFault.MISSING_FIELDS, "tool_name missing or not a string")
    if "parameters" not in raw:
        raise ShapeError(ShapeFault.MISSING_FIELDS, f"{name}: parameters missing")
    if not isinstance(raw["parameters"], dict):
        raise ShapeError(ShapeFault.MISSING_FIELDS, f"{name}: parameters is not an object")
    return ToolCall(tool_name=name, parameters=raw["parameters"])
