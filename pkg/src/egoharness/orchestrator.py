"""Episode loop: user turns, agent turns, tool batches and budgets."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .agent import GREETING, ChatBackend, ChatMessage, Role, UsageCounters, send
from .errors import HarnessError
from .prompts import PromptSet, default_prompts, fill
from .store import ScenarioDatabase, StateDigest, snapshot
from .tasks import TaskSpec
from .tools.calls import ShapeError, ToolCall, ToolResult, validate_call_shape
from .tools.common import ToolContext
from .tools.engine import execute
from .tools.schema import ToolRegistry
from .usersim import InteractionMode, UserSimulator

log = logging.getLogger(__name__)

DEFAULT_MAX_USER_TURNS = 10
DEFAULT_MAX_TOOL_CALLS = 200
DEFAULT_MAX_INNER_ITERATIONS = 25


class HaltReason(str, Enum):
    USER_STOP = "USER_STOP"
    TURN_LIMIT = "TURN_LIMIT"
    TOOL_LIMIT = "TOOL_LIMIT"
    AGENT_ERROR = "AGENT_ERROR"
    USER_TERMINATED = "USER_TERMINATED"


@dataclass(frozen=True)
class EpisodeConfig:
    mode: InteractionMode = InteractionMode.DYNAMIC_EASY
    max_user_turns: int = DEFAULT_MAX_USER_TURNS
    max_tool_calls: int = DEFAULT_MAX_TOOL_CALLS
    max_inner_iterations: int = DEFAULT_MAX_INNER_ITERATIONS
    # Dynamic-Hard only: end after this many consecutive complaints; None disables.
    terminate_after_complaints: int | None = None
    max_context_chars: int | None = None
    fuzzy_threshold: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", InteractionMode.parse(self.mode))
        for name in ("max_user_turns", "max_tool_calls", "max_inner_iterations"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.terminate_after_complaints is not None and self.terminate_after_complaints < 1:
            raise ValueError("terminate_after_complaints must be positive or None")

    @property
    def user_turn_limit(self) -> int:
        return 1 if self.mode is InteractionMode.STATIC else self.max_user_turns


# -- agent message parsing ----------------------------------------------------


@dataclass(frozen=True)
class ToolCallBatch:
    calls: tuple[ToolCall, ...]


@dataclass(frozen=True)
class NaturalReply:
    text: str
    format_violation: bool = False
    # Shape faults of array elements that looked like calls, as (fault, raw) pairs.
    malformed: tuple[tuple[str, Any], ...] = ()


_FENCE = re.compile(r"```(?:json)?\s*(.*?)\s*```", re.DOTALL)
_EMBEDDED = re.compile(r"\[\s*\{.*\}\s*\]", re.DOTALL)


def _json_or_none(text: str) -> Any:
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return None


def parse_agent_message(text: str) -> ToolCallBatch | NaturalReply:
    """A message is a batch only if the whole of it is a JSON array of well-formed calls."""
    body = text.strip()
    fenced = _FENCE.fullmatch(body)
    if fenced:
        body = fenced.group(1)
    doc = _json_or_none(body)
    if isinstance(doc, list):
        if not doc:
            return NaturalReply(text, format_violation=True, malformed=(("NO_CALL", []),))
        calls, faults = [], []
        for raw in doc:
            try:
                calls.append(validate_call_shape(raw))
            except ShapeError as exc:
                faults.append((exc.fault.value, raw))
        if faults:
            return NaturalReply(text, format_violation=True, malformed=tuple(faults))
        return ToolCallBatch(tuple(calls))
    if isinstance(doc, dict) and "tool_name" in doc:
        return NaturalReply(text, format_violation=True)
    embedded = _EMBEDDED.search(text)
    if embedded and '"tool_name"' in embedded.group(0):
        return NaturalReply(text, format_violation=True)
    return NaturalReply(text)


# -- budgets ------------------------------------------------------------------


@dataclass(frozen=True)
class BudgetDecision:
    halt: HaltReason | None = None
    allowed: int = 0

    @property
    def proceed(self) -> bool:
        return self.halt is None


CONTINUE = BudgetDecision()


def enforce_budgets(user_turns: int, tool_calls: int, cfg: EpisodeConfig, pending: int = 0) -> BudgetDecision:
    """Check the caps before a user turn (``pending`` 0) or before a batch of ``pending`` calls.

    ``allowed`` is how many of the pending calls may still run.
    """
    if pending == 0:
        if user_turns >= cfg.user_turn_limit:
            return BudgetDecision(HaltReason.TURN_LIMIT, 0)
        if tool_calls >= cfg.max_tool_calls:
            return BudgetDecision(HaltReason.TOOL_LIMIT, 0)
        return CONTINUE
    room = max(cfg.max_tool_calls - tool_calls, 0)
    if pending > room:
        return BudgetDecision(HaltReason.TOOL_LIMIT, room)
    return BudgetDecision(None, pending)


# -- trajectory ---------------------------------------------------------------


class TurnRole(str, Enum):
    USER = "user"
    AGENT = "agent"
    TOOL_BATCH = "tool_batch"


@dataclass
class Turn:
    role: TurnRole
    index: int
    content: Any
    token_usage: UsageCounters | None = None
    evaluation: dict[str, Any] | None = None


@dataclass
class Trajectory:
    task_id: str
    scenario_id: str
    mode: InteractionMode
    instruction: str = ""
    image_description: str = ""
    model: str = ""
    turns: list[Turn] = field(default_factory=list)
    tool_calls_flat: list[ToolCall] = field(default_factory=list)
    final_digest: StateDigest | None = None
    gt_digest: StateDigest | None = None
    halted_reason: HaltReason | None = None
    usage: UsageCounters = UsageCounters()
    user_usage: UsageCounters = UsageCounters()
    malformed_calls: list[dict[str, Any]] = field(default_factory=list)
    format_violations: list[int] = field(default_factory=list)
    ground_truth: dict[str, Any] | None = None
    error: str | None = None

    @property
    def user_turns(self) -> int:
        return sum(1 for t in self.turns if t.role is TurnRole.USER)

    @property
    def rounds_count(self) -> int:
        return sum(1 for t in self.turns if t.role is TurnRole.AGENT)

    @property
    def tool_calls_count(self) -> int:
        return len(self.tool_calls_flat)

    @property
    def last_agent_reply(self) -> str | None:
        for turn in reversed(self.turns):
            if turn.role is TurnRole.AGENT:
                return turn.content
        return None

    @property
    def calls_after_last_reply(self) -> int:
        count = 0
        for turn in reversed(self.turns):
            if turn.role is TurnRole.AGENT:
                break
            if turn.role is TurnRole.TOOL_BATCH:
                count += len(turn.content["calls"])
        return count

    def to_log(self) -> dict[str, Any]:
        dialogue: list[dict[str, Any]] = []
        tool_calls: list[dict[str, Any]] = []
        for turn in self.turns:
            if turn.role is TurnRole.TOOL_BATCH:
                results = turn.content["results"]
                entry = {"turn": turn.index, "calls": [c.to_dict() for c in turn.content["calls"]]}
                if isinstance(results, str):
                    entry.update(results=results, statuses=turn.content.get("statuses", []))
                else:
                    entry.update(
                        results="; ".join(r.content() for r in results),
                        statuses=[r.status.value for r in results],
                    )
                tool_calls.append(entry)
                continue
            entry: dict[str, Any] = {"role": turn.role.value, "turn": turn.index, "content": turn.content}
            if turn.evaluation is not None:
                entry["evaluation"] = turn.evaluation
            dialogue.append(entry)
        return {
            "task_id": self.task_id,
            "scenario_id": self.scenario_id,
            "mode": self.mode.value,
            "model": self.model,
            "instruction": self.instruction,
            "image_description": self.image_description,
            "dialogue": dialogue,
            "tool_calls": tool_calls,
            "rounds_count": self.rounds_count,
            "input_tokens": self.usage.input_tokens,
            "output_tokens": self.usage.output_tokens,
            "tool_calls_count": self.tool_calls_count,
            "user_turns": self.user_turns,
            "user_input_tokens": self.user_usage.input_tokens,
            "user_output_tokens": self.user_usage.output_tokens,
            "halted_reason": self.halted_reason.value if self.halted_reason else None,
            "final_digest": self.final_digest.digest if self.final_digest else None,
            "gt_digest": self.gt_digest.digest if self.gt_digest else None,
            "malformed_calls": self.malformed_calls,
            "format_violations": self.format_violations,
            "ground_truth": self.ground_truth,
            "error": self.error,
        }

    @classmethod
    def from_log(cls, doc: dict[str, Any]) -> "Trajectory":
        """Rebuild from ``to_log`` output; tool results come back as raw strings."""
        turns: list[Turn] = []
        entries = [(e["turn"], 0 if e["role"] == "user" else 2, e) for e in doc["dialogue"]]
        entries += [(b["turn"], 1, b) for b in doc["tool_calls"]]
        # Within one exchange: user message, tool batches, then the agent reply.
        for index, rank, entry in sorted(entries, key=lambda x: (x[0], x[1])):
            if rank == 1:
                calls = [ToolCall(c["tool_name"], c["parameters"]) for c in entry["calls"]]
                content = {"calls": calls, "results": entry["results"], "statuses": entry.get("statuses", [])}
                turns.append(Turn(TurnRole.TOOL_BATCH, index, content))
            else:
                turns.append(
                    Turn(TurnRole(entry["role"]), index, entry["content"], evaluation=entry.get("evaluation"))
                )
        flat = [c for t in turns if t.role is TurnRole.TOOL_BATCH for c in t.content["calls"]]
        digest = lambda v: StateDigest(v) if v else None  # noqa: E731
        return cls(
            task_id=doc["task_id"],
            scenario_id=doc["scenario_id"],
            mode=InteractionMode.parse(doc["mode"]),
            instruction=doc.get("instruction", ""),
            image_description=doc.get("image_description", ""),
            model=doc.get("model", ""),
            turns=turns,
            tool_calls_flat=flat,
            final_digest=digest(doc.get("final_digest")),
            gt_digest=digest(doc.get("gt_digest")),
            halted_reason=HaltReason(doc["halted_reason"]) if doc.get("halted_reason") else None,
            usage=UsageCounters(doc.get("input_tokens", 0), doc.get("output_tokens", 0)),
            user_usage=UsageCounters(doc.get("user_input_tokens", 0), doc.get("user_output_tokens", 0)),
            malformed_calls=list(doc.get("malformed_calls", [])),
            format_violations=list(doc.get("format_violations", [])),
            ground_truth=doc.get("ground_truth"),
            error=doc.get("error"),
        )


# -- episode ------------------------------------------------------------------


def agent_system_prompt(registry: ToolRegistry, prompts: PromptSet) -> str:
    docs = json.dumps(registry.documents(), ensure_ascii=False, indent=2)
    return fill(prompts.service_agent, tool_descriptions=docs)


def tool_feedback(calls: list[ToolCall], results: list[ToolResult]) -> str:
    return json.dumps(
        [{"tool_name": c.tool_name, "parameters": c.parameters, "result": r.payload} for c, r in zip(calls, results)],
        ensure_ascii=False,
    )


def run_episode(
    task: TaskSpec,
    agent: ChatBackend,
    user: UserSimulator,
    db: ScenarioDatabase,
    cfg: EpisodeConfig,
    registry: ToolRegistry,
    *,
    prompts: PromptSet | None = None,
    model: str = "",
    gt_digest: StateDigest | None = None,
) -> Trajectory:
    """Run one task to completion.  ``db`` is mutated in place and should be a fresh copy."""
    prompts = prompts or default_prompts()
    ctx = ToolContext(threshold=cfg.fuzzy_threshold)
    traj = Trajectory(
        task_id=task.task_id,
        scenario_id=task.scenario_id,
        mode=cfg.mode,
        instruction=task.instruction,
        image_description=task.image_description,
        model=model,
        gt_digest=gt_digest,
        ground_truth=task.ground_truth.to_dict(),
    )
    tools = registry.documents()
    history = [
        ChatMessage(Role.SYSTEM, agent_system_prompt(registry, prompts)),
        ChatMessage(Role.ASSISTANT, GREETING),
    ]
    agent_reply = GREETING
    exchange = 0

    def halt(reason: HaltReason, error: str | None = None) -> Trajectory:
        traj.halted_reason = reason
        traj.error = error
        traj.final_digest = snapshot(db)
        traj.user_usage = user.usage
        return traj

    while True:
        decision = enforce_budgets(traj.user_turns, traj.tool_calls_count, cfg)
        if not decision.proceed:
            return halt(decision.halt)
        try:
            uturn = user.next_message(agent_reply)
        except HarnessError as exc:
            return halt(HaltReason.AGENT_ERROR, f"user simulator: {exc}")
        traj.turns.append(Turn(TurnRole.USER, exchange, uturn.content, evaluation=uturn.evaluation))
        if uturn.is_stop:
            return halt(HaltReason.USER_STOP)
        if (
            cfg.mode is InteractionMode.DYNAMIC_HARD
            and cfg.terminate_after_complaints is not None
            and user.state.complaints >= cfg.terminate_after_complaints
        ):
            return halt(HaltReason.USER_TERMINATED)
        media = (task.media,) if task.media is not None and exchange == 0 else ()
        history.append(ChatMessage(Role.USER, uturn.content, media))

        for _ in range(cfg.max_inner_iterations):
            try:
                text, usage = send(
                    history,
                    tools,
                    agent,
                    media_fallback=task.image_description or None,
                    max_context_chars=cfg.max_context_chars,
                )
            except HarnessError as exc:
                return halt(HaltReason.AGENT_ERROR, str(exc))
            traj.usage = traj.usage + usage
            history.append(ChatMessage(Role.ASSISTANT, text))
            parsed = parse_agent_message(text)
            if isinstance(parsed, NaturalReply):
                if parsed.format_violation:
                    traj.format_violations.append(exchange)
                for fault, raw in parsed.malformed:
                    traj.malformed_calls.append({"turn": exchange, "fault": fault, "raw": raw})
                traj.turns.append(Turn(TurnRole.AGENT, exchange, text, token_usage=usage))
                agent_reply = text
                break
            decision = enforce_budgets(traj.user_turns, traj.tool_calls_count, cfg, pending=len(parsed.calls))
            calls = list(parsed.calls[: decision.allowed])
            results = [execute(db, call, registry, ctx=ctx)[0] for call in calls]
            if calls:
                traj.tool_calls_flat.extend(calls)
                traj.turns.append(
                    Turn(TurnRole.TOOL_BATCH, exchange, {"calls": calls, "results": results}, token_usage=usage)
                )
            if not decision.proceed:
                dropped = len(parsed.calls) - len(calls)
                log.info("%s: tool budget reached, %d call(s) dropped", task.task_id, dropped)
                return halt(decision.halt)
            history.append(ChatMessage(Role.TOOL, tool_feedback(calls, results)))
        else:
            return halt(
                HaltReason.AGENT_ERROR,
                f"agent produced no natural-language reply within {cfg.max_inner_iterations} iterations",
            )

        if cfg.mode is not InteractionMode.STATIC:
            try:
                user.summarize_turn(agent_reply, uturn.content)
            except HarnessError as exc:
                return halt(HaltReason.AGENT_ERROR, f"user simulator: {exc}")
        exchange += 1
