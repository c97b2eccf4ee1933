"""Task specifications and ground truth."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import SchemaError
from .store import normalize_name
from .tools.calls import ShapeError, ToolCall, validate_call_shape

_USER_ID_PATTERNS = (
    re.compile(r"User\s*ID\s*:\s*([A-Za-z0-9][A-Za-z0-9_.\-]*)", re.IGNORECASE),
    re.compile(r"user[\s_]?id\s+is\s+([A-Za-z0-9][A-Za-z0-9_.\-]*)", re.IGNORECASE),
)


def extract_user_id(text: str) -> str | None:
    """First id following "User ID:" or "user ID is"; LaTeX-escaped underscores allowed."""
    text = text.replace("\\_", "_")
    for pattern in _USER_ID_PATTERNS:
        m = pattern.search(text)
        if m:
            return m.group(1).rstrip(".-")
    return None


@dataclass(frozen=True)
class MediaRef:
    """Opaque locator for the first-person video or image; never decoded."""

    uri: str
    kind: str = "video"
    duration_s: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("video", "image"):
            raise SchemaError(f"media kind must be video or image, got {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"uri": self.uri, "kind": self.kind}
        if self.duration_s is not None:
            out["duration_s"] = self.duration_s
        return out

    @classmethod
    def from_dict(cls, data: Any) -> "MediaRef":
        if isinstance(data, str):
            return cls(uri=data)
        if not isinstance(data, dict) or not isinstance(data.get("uri"), str):
            raise SchemaError("media must be a string or an object with 'uri'")
        return cls(uri=data["uri"], kind=data.get("kind", "video"), duration_s=data.get("duration_s"))


@dataclass(frozen=True)
class PerceptionAnchor:
    """A parameter key and the values a read call must have queried."""

    key: str
    values: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"key": self.key, "values": list(self.values)}


@dataclass
class GroundTruth:
    task_id: str
    user_id: str
    tool_calls: list[ToolCall] = field(default_factory=list)
    perception_anchors: list[PerceptionAnchor] = field(default_factory=list)

    @property
    def G(self) -> int:
        return len(self.tool_calls)

    def to_dict(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "tool_calls": [c.to_dict() for c in self.tool_calls],
            "perception_anchors": [a.to_dict() for a in self.perception_anchors],
        }

    @classmethod
    def from_dict(cls, data: Any, task_id: str, default_user: str | None = None) -> "GroundTruth":
        if not isinstance(data, dict):
            raise SchemaError(f"{task_id}: ground_truth must be an object")
        calls = []
        for i, raw in enumerate(data.get("tool_calls", [])):
            try:
                calls.append(validate_call_shape(raw))
            except ShapeError as exc:
                raise SchemaError(f"{task_id}: ground_truth.tool_calls[{i}]: {exc}") from exc
        anchors = []
        for raw in data.get("perception_anchors", []):
            if not isinstance(raw, dict) or "key" not in raw or "values" not in raw:
                raise SchemaError(f"{task_id}: perception anchor needs 'key' and 'values'")
            values = raw["values"] if isinstance(raw["values"], list) else [raw["values"]]
            anchors.append(PerceptionAnchor(key=str(raw["key"]), values=tuple(str(v) for v in values)))
        user_id = data.get("user_id", default_user)
        if not isinstance(user_id, str) or not user_id:
            raise SchemaError(f"{task_id}: ground_truth.user_id missing")
        return cls(task_id=task_id, user_id=user_id, tool_calls=calls, perception_anchors=anchors)


@dataclass
class TaskSpec:
    task_id: str
    scenario_id: str
    instruction: str
    ground_truth: GroundTruth
    image_description: str = ""
    media: MediaRef | None = None
    user_script: list[str] = field(default_factory=list)
    static_message: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "task_id": self.task_id,
            "scenario_id": self.scenario_id,
            "instruction": self.instruction,
            "image_description": self.image_description,
            "ground_truth": self.ground_truth.to_dict(),
            "user_script": list(self.user_script),
        }
        if self.media is not None:
            out["media"] = self.media.to_dict()
        if self.static_message is not None:
            out["static_message"] = self.static_message
        return out

    @classmethod
    def from_dict(cls, data: Any) -> "TaskSpec":
        if not isinstance(data, dict):
            raise SchemaError("task must be an object")
        for key in ("task_id", "scenario_id", "instruction", "ground_truth"):
            if key not in data:
                raise SchemaError(f"task missing field {key!r}")
        task_id = str(data["task_id"])
        found = extract_user_id(data["instruction"])
        gt = GroundTruth.from_dict(data["ground_truth"], task_id, default_user=found)
        if found is None or normalize_name(found) != normalize_name(gt.user_id):
            raise SchemaError(
                f"{task_id}: instruction user id {found!r} does not match ground truth {gt.user_id!r}"
            )
        script = data.get("user_script", [])
        if not isinstance(script, list) or not all(isinstance(s, str) for s in script):
            raise SchemaError(f"{task_id}: user_script must be a list of strings")
        return cls(
            task_id=task_id,
            scenario_id=str(data["scenario_id"]),
            instruction=data["instruction"],
            image_description=data.get("image_description", ""),
            media=MediaRef.from_dict(data["media"]) if data.get("media") else None,
            ground_truth=gt,
            user_script=list(script),
            static_message=data.get("static_message"),
        )


def load_tasks(path: str | Path) -> list[TaskSpec]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    rows = doc if isinstance(doc, list) else doc.get("tasks", [doc]) if isinstance(doc, dict) else None
    if rows is None:
        raise SchemaError(f"{path}: expected a task object or a list of tasks")
    tasks = [TaskSpec.from_dict(row) for row in rows]
    ids = [t.task_id for t in tasks]
    if len(ids) != len(set(ids)):
        raise SchemaError(f"{path}: duplicate task ids")
    return tasks
