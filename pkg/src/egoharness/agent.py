"""Chat backends and the adapter that presents observations to the agent.

A backend is anything with ``complete(messages, tools) -> Completion``.
Offline backends (scripted playbooks, the ground-truth oracle, callables)
make whole runs deterministic; ``HttpBackend`` speaks to a hosted model
through a JSON profile so new providers need no code.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol, Sequence

import httpx

from .errors import AgentBackendError, ConfigError, ProtocolError, TransportError
from .tasks import GroundTruth, MediaRef
from .tools.calls import ToolCall

log = logging.getLogger(__name__)

GREETING = "Dear customer, how can I help you?"
COMPLETION_REPLY = "Your request has been completed."


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str
    media: tuple[MediaRef, ...] = ()
    # Structured hints for offline backends; never sent over the wire.
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.media and self.role not in (Role.USER, Role.SYSTEM):
            raise ValueError("media may only be attached to user or system messages")


@dataclass(frozen=True)
class UsageCounters:
    input_tokens: int = 0
    output_tokens: int = 0

    def __add__(self, other: "UsageCounters") -> "UsageCounters":
        return UsageCounters(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)


@dataclass(frozen=True)
class Completion:
    text: str
    usage: UsageCounters = UsageCounters()


class ChatBackend(Protocol):
    supports_media: bool

    def complete(self, messages: Sequence[ChatMessage], tools: Sequence[dict] | None = None) -> Completion: ...


# -- offline backends ---------------------------------------------------------


class ScriptedBackend:
    """Returns the playbook entries in order; running past the end is an error."""

    supports_media = True

    def __init__(self, playbook: Iterable[str], name: str = "scripted") -> None:
        self.playbook = list(playbook)
        self.calls = 0
        self.name = name

    def complete(self, messages, tools=None) -> Completion:
        if self.calls >= len(self.playbook):
            raise ProtocolError(f"{self.name}: playbook exhausted after {self.calls} replies")
        text = self.playbook[self.calls]
        self.calls += 1
        return Completion(text)


class FunctionBackend:
    """Wraps ``fn(messages, tools) -> str | Completion``."""

    supports_media = True

    def __init__(self, fn: Callable[..., str | Completion], name: str = "function") -> None:
        self.fn = fn
        self.calls = 0
        self.name = name

    def complete(self, messages, tools=None) -> Completion:
        self.calls += 1
        out = self.fn(list(messages), tools)
        return out if isinstance(out, Completion) else Completion(str(out))


class OracleAgent:
    """Replays ground-truth calls as tool batches, then answers in prose.

    Each time the agent is asked to speak, the next pending batch is emitted
    as a JSON array.  Once everything is sent it replies with a short
    completion message, so the dialogue can end naturally.
    """

    supports_media = True

    def __init__(
        self,
        gt: GroundTruth,
        batch_size: int | None = None,
        extra_calls: Iterable[ToolCall] = (),
        reply: str = COMPLETION_REPLY,
    ) -> None:
        calls = list(gt.tool_calls) + list(extra_calls)
        size = batch_size or max(len(calls), 1)
        self.batches = [calls[i : i + size] for i in range(0, len(calls), size)]
        self.reply = reply
        self.calls = 0

    def complete(self, messages, tools=None) -> Completion:
        self.calls += 1
        if self.batches:
            batch = self.batches.pop(0)
            return Completion(json.dumps([c.to_dict() for c in batch], ensure_ascii=False))
        return Completion(self.reply)


def oracle_agent(
    ground_truth: GroundTruth, batch_size: int | None = None, extra_calls: Iterable[ToolCall] = ()
) -> OracleAgent:
    return OracleAgent(ground_truth, batch_size=batch_size, extra_calls=extra_calls)


def noop_agent(reply: str = "I am sorry, I cannot help with that request.") -> FunctionBackend:
    return FunctionBackend(lambda messages, tools: reply, name="noop")


# -- HTTP backend -------------------------------------------------------------


def _dig(doc: Any, path: str) -> Any:
    cur = doc
    for part in path.split("."):
        if isinstance(cur, list) and part.isdigit():
            idx = int(part)
            if idx >= len(cur):
                raise KeyError(path)
            cur = cur[idx]
        elif isinstance(cur, dict) and part in cur:
            cur = cur[part]
        else:
            raise KeyError(path)
    return cur


@dataclass
class BackendProfile:
    """Wire mapping for one provider; the defaults follow the common chat-completions shape."""

    base_url: str
    model: str
    path: str = "/v1/chat/completions"
    api_key_env: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_s: float = 0.5
    supports_media: bool = False
    send_tools: bool = True
    role_map: dict[str, str] = field(default_factory=lambda: {"tool": "user"})
    headers: dict[str, str] = field(default_factory=dict)
    extra_body: dict[str, Any] = field(default_factory=dict)
    model_field: str = "model"
    messages_field: str = "messages"
    tools_field: str = "tools"
    text_path: str = "choices.0.message.content"
    input_tokens_path: str = "usage.prompt_tokens"
    output_tokens_path: str = "usage.completion_tokens"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BackendProfile":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown backend profile keys: {sorted(unknown)}")
        if "base_url" not in data or "model" not in data:
            raise ConfigError("backend profile needs base_url and model")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "BackendProfile":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


class HttpBackend:
    """Generic JSON chat endpoint with retry on transport errors, 429 and 5xx."""

    def __init__(
        self,
        profile: BackendProfile,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.profile = profile
        self.supports_media = profile.supports_media
        self._client = client
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json", **self.profile.headers}
        if self.profile.api_key_env:
            key = os.environ.get(self.profile.api_key_env)
            if not key:
                raise ConfigError(f"environment variable {self.profile.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _wire_message(self, msg: ChatMessage) -> dict[str, Any]:
        role = self.profile.role_map.get(msg.role.value, msg.role.value)
        out: dict[str, Any] = {"role": role, "content": msg.content}
        if msg.media and self.supports_media:
            out["media"] = [m.to_dict() for m in msg.media]
        return out

    def build_body(self, messages: Sequence[ChatMessage], tools: Sequence[dict] | None) -> dict[str, Any]:
        body: dict[str, Any] = {
            self.profile.model_field: self.profile.model,
            self.profile.messages_field: [self._wire_message(m) for m in messages],
        }
        if tools and self.profile.send_tools:
            body[self.profile.tools_field] = list(tools)
        body.update(self.profile.extra_body)
        return body

    def complete(self, messages, tools=None) -> Completion:
        body = self.build_body(messages, tools)
        url = self.profile.base_url.rstrip("/") + self.profile.path
        headers = self._headers()
        client = self._client or httpx.Client(timeout=self.profile.timeout_s)
        try:
            response = self._post_with_retry(client, url, body, headers)
        finally:
            if self._client is None:
                client.close()
        try:
            doc = response.json()
        except ValueError as exc:
            raise ProtocolError(f"backend returned non-JSON body: {exc}") from exc
        try:
            text = _dig(doc, self.profile.text_path)
        except KeyError:
            raise ProtocolError(f"response lacks {self.profile.text_path!r}") from None
        if not isinstance(text, str):
            raise ProtocolError(f"{self.profile.text_path!r} is not a string")
        usage = UsageCounters(
            _usage(doc, self.profile.input_tokens_path), _usage(doc, self.profile.output_tokens_path)
        )
        return Completion(text, usage)

    def _post_with_retry(self, client, url, body, headers) -> httpx.Response:
        attempts = self.profile.max_retries + 1
        last = ""
        for attempt in range(attempts):
            if attempt:
                self._sleep(self.profile.backoff_s * (2 ** (attempt - 1)))
            try:
                response = client.post(url, json=body, headers=headers, timeout=self.profile.timeout_s)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last = f"HTTP {response.status_code}"
                continue
            if response.status_code >= 400:
                raise ProtocolError(f"HTTP {response.status_code}: {response.text[:200]}")
            return response
        raise TransportError(f"{url}: giving up after {attempts} attempt(s) ({last})")


def _usage(doc: Any, path: str) -> int:
    try:
        value = _dig(doc, path)
    except KeyError:
        return 0
    return int(value) if isinstance(value, (int, float)) and not isinstance(value, bool) else 0


# -- adapter ------------------------------------------------------------------

TRUNCATED = "[tool result truncated to fit the context budget]"


def truncate_history(history: Sequence[ChatMessage], max_chars: int) -> tuple[list[ChatMessage], int]:
    """Blank the oldest tool payloads until the history fits ``max_chars``."""
    out = list(history)
    total = sum(len(m.content) for m in out)
    dropped = 0
    for i, msg in enumerate(out):
        if total <= max_chars:
            break
        if msg.role is Role.TOOL and msg.content != TRUNCATED:
            total -= len(msg.content) - len(TRUNCATED)
            out[i] = ChatMessage(Role.TOOL, TRUNCATED, metadata=msg.metadata)
            dropped += 1
    return out, dropped


def send(
    history: Sequence[ChatMessage],
    tools: Sequence[dict] | None,
    backend: ChatBackend,
    *,
    media_fallback: str | None = None,
    max_context_chars: int | None = None,
) -> tuple[str, UsageCounters]:
    """One agent completion.  Backend failures surface as ``AgentBackendError``."""
    if not history:
        raise AgentBackendError("history is empty")
    if history[0].role is not Role.SYSTEM:
        raise AgentBackendError("history must start with the service agent system prompt")
    messages = list(history)
    if not getattr(backend, "supports_media", False):
        messages = [_degrade(m, media_fallback) for m in messages]
    if max_context_chars is not None:
        messages, dropped = truncate_history(messages, max_context_chars)
        if dropped:
            log.info("truncated %d tool result(s) to fit %d chars", dropped, max_context_chars)
    try:
        completion = backend.complete(messages, tools)
    except AgentBackendError:
        raise
    except (TransportError, ProtocolError, ConfigError) as exc:
        raise AgentBackendError(str(exc)) from exc
    return completion.text, completion.usage


def _degrade(msg: ChatMessage, fallback: str | None) -> ChatMessage:
    if not msg.media:
        return msg
    log.debug("backend lacks media support; sending scene description instead")
    text = msg.content
    if fallback:
        text = f"{text}\n\n[Scene description]\n{fallback}"
    return ChatMessage(msg.role, text, (), msg.metadata)
