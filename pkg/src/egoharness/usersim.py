"""Simulated user: Actor, Evaluator and Summarizer with one correction pass.

Each user turn runs the Actor, scores its draft on four binary criteria and,
if any criterion fails, asks the Actor once more with the Evaluator's
suggestion.  The second draft is forwarded whatever its scores.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

from .agent import ChatBackend, ChatMessage, Completion, Role, UsageCounters
from .errors import BackendError, MalformedEvaluation, UserBackendError
from .prompts import PromptSet, default_prompts, fill
from .tasks import TaskSpec, extract_user_id
from .store import normalize_name

log = logging.getLogger(__name__)

CRITERIA = ("role_consistency", "instruction_following", "resilience", "contextual_robustness")
COMPLAINT_PREFIX = "Bad Service Agent"
EVALUATOR_CALLS_PER_TURN = 2
_STOP = re.compile(r"\bSTOP\b")
_SENTENCE_END = re.compile(r"[.!?]\s+")


class InteractionMode(str, Enum):
    DYNAMIC_EASY = "easy"
    DYNAMIC_HARD = "hard"
    STATIC = "static"

    @classmethod
    def parse(cls, value: "str | InteractionMode") -> "InteractionMode":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        aliases = {"dynamic_easy": "easy", "dynamic_hard": "hard"}
        return cls(aliases.get(text, text))


def is_stop(text: str) -> bool:
    return text.strip() == "STOP" or bool(_STOP.search(text))


def is_complaint(text: str) -> bool:
    return text.lstrip().startswith(COMPLAINT_PREFIX)


def count_sentences(text: str) -> int:
    text = text.strip()
    if not text:
        return 0
    return len(_SENTENCE_END.split(text))


@dataclass(frozen=True)
class CriteriaScores:
    role_consistency: int
    instruction_following: int
    resilience: int
    contextual_robustness: int
    suggestion: str = ""

    def __post_init__(self) -> None:
        for name in CRITERIA:
            if getattr(self, name) not in (0, 1):
                raise MalformedEvaluation(f"{name} must be 0 or 1")
        if self.all_pass and self.suggestion:
            raise MalformedEvaluation("suggestion must be empty when every criterion passes")
        if not self.all_pass and not self.suggestion.strip():
            raise MalformedEvaluation("a failing evaluation must carry a suggestion")

    @property
    def scores(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in CRITERIA}

    @property
    def all_pass(self) -> bool:
        return min(self.scores.values()) == 1

    @property
    def average(self) -> float:
        return sum(self.scores.values()) / len(CRITERIA)

    @classmethod
    def passing(cls) -> "CriteriaScores":
        return cls(1, 1, 1, 1, "")


def parse_evaluation(text: str) -> CriteriaScores:
    """Strict parse of ``{"scores": {...}, "suggestion": "..."}``.

    A code fence around the object is tolerated.  An all-pass result with a
    stray suggestion is accepted with the suggestion dropped.
    """
    body = text.strip()
    fence = re.fullmatch(r"```(?:json)?\s*(.*?)\s*```", body, re.DOTALL)
    if fence:
        body = fence.group(1)
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise MalformedEvaluation(f"evaluator output is not JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("scores"), dict):
        raise MalformedEvaluation("evaluator output lacks a 'scores' object")
    scores = doc["scores"]
    values = {}
    for name in CRITERIA:
        value = scores.get(name)
        if isinstance(value, bool) or value not in (0, 1):
            raise MalformedEvaluation(f"score {name!r} missing or not binary: {value!r}")
        values[name] = int(value)
    suggestion = doc.get("suggestion", "")
    if not isinstance(suggestion, str):
        raise MalformedEvaluation("suggestion must be a string")
    if min(values.values()) == 1:
        suggestion = ""
    return CriteriaScores(**values, suggestion=suggestion)


@dataclass
class UserSessionState:
    task: TaskSpec
    mode: InteractionMode
    summary: str = ""
    feedback: str | None = None
    original_response: str | None = None
    turn: int = 0
    complaints: int = 0

    def set_feedback(self, feedback: str, original: str) -> None:
        self.feedback, self.original_response = feedback, original

    def clear_feedback(self) -> None:
        self.feedback = self.original_response = None


@dataclass
class UserBackends:
    actor: ChatBackend
    evaluator: ChatBackend
    summarizer: ChatBackend | None = None


@dataclass
class UserTurn:
    content: str
    evaluation: dict[str, Any]
    actor_calls: int
    evaluator_calls: int
    is_stop: bool
    is_complaint: bool
    usage: UsageCounters = UsageCounters()


@dataclass
class NoiseSource:
    """Seeded chatter appended to hard-mode user messages."""

    pool: Sequence[str]
    seed: str | int = 0
    _rng: random.Random = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.pool:
            raise ValueError("noise pool is empty")
        self._rng = random.Random(str(self.seed))

    def draw(self) -> str:
        return self._rng.choice(list(self.pool))


def hard_mode_noise(mode: InteractionMode, base_msg: str, noise: NoiseSource | None) -> str:
    if mode is not InteractionMode.DYNAMIC_HARD or noise is None:
        return base_msg
    return f"{base_msg.rstrip()} {noise.draw()}"


class UserSimulator:
    def __init__(
        self,
        task: TaskSpec,
        mode: InteractionMode | str,
        backends: UserBackends,
        prompts: PromptSet | None = None,
        noise: NoiseSource | None = None,
    ) -> None:
        self.state = UserSessionState(task=task, mode=InteractionMode.parse(mode))
        self.backends = backends
        self.prompts = prompts or default_prompts()
        self.noise = noise
        self.usage = UsageCounters()

    @property
    def mode(self) -> InteractionMode:
        return self.state.mode

    # -- actor ----------------------------------------------------------------

    def actor_prompt(self, agent_reply: str) -> str:
        st = self.state
        if st.mode is InteractionMode.STATIC:
            text = fill(self.prompts.user_static, user_instruction=st.task.instruction)
            if st.feedback:
                text += (
                    "\n\n## Revision\n"
                    f"- **Original User Response**: {st.original_response}\n"
                    f"- **Evaluation Feedback**: {st.feedback}\n"
                )
            return text
        template = self.prompts.user_hard if st.mode is InteractionMode.DYNAMIC_HARD else self.prompts.user_easy
        return fill(
            template,
            user_instruction=st.task.instruction,
            image_description=st.task.image_description,
            original_user_response=st.original_response or "",
            evaluation_feedback=st.feedback or "",
            history_summary=st.summary,
            service_agent_response=agent_reply,
        )

    def actor_respond(self, agent_reply: str) -> str:
        st = self.state
        meta = {
            "role": "actor",
            "mode": st.mode.value,
            "turn": st.turn,
            "revision": st.feedback is not None,
            "feedback": st.feedback,
            "original_response": st.original_response,
            "agent_msg": agent_reply,
            "summary": st.summary,
        }
        messages = [
            ChatMessage(Role.SYSTEM, self.actor_prompt(agent_reply), metadata=meta),
            ChatMessage(Role.USER, "Write your next message as the Customer.", metadata=meta),
        ]
        text = self._call(self.backends.actor, messages, "actor").text
        if st.turn == 0 and st.mode is not InteractionMode.STATIC:
            uid = st.task.ground_truth.user_id
            if uid and normalize_name(uid) not in normalize_name(text) and not is_stop(text):
                log.warning("%s: first user message omits user_id %s", st.task.task_id, uid)
        return text

    # -- evaluator ------------------------------------------------------------

    def evaluator_input(self, user_msg: str, agent_msg: str) -> str:
        st = self.state
        return (
            f"[User Original Instruction]\n{st.task.instruction}\n\n"
            f"[Interaction process]\n{st.summary}\n\n"
            f"[Service Agent Response]\n{agent_msg}\n\n"
            f"[Simulated User Response]\n{user_msg}"
        )

    def evaluate_response(
        self, user_msg: str, agent_msg: str, max_calls: int = 2, strict: bool = True
    ) -> tuple[CriteriaScores | None, int]:
        """Score a draft; a malformed reply is re-queried while ``max_calls`` allows.

        Returns (scores, calls).  When every attempt is malformed this raises if
        ``strict``, else returns ``None`` scores.
        """
        st = self.state
        meta = {
            "role": "evaluator",
            "instruction": st.task.instruction,
            "user_id": st.task.ground_truth.user_id,
            "user_msg": user_msg,
            "agent_msg": agent_msg,
            "turn": st.turn,
        }
        messages = [
            ChatMessage(Role.SYSTEM, self.prompts.evaluator, metadata=meta),
            ChatMessage(Role.USER, self.evaluator_input(user_msg, agent_msg), metadata=meta),
        ]
        last: MalformedEvaluation | None = None
        calls = 0
        while calls < max_calls:
            text = self._call(self.backends.evaluator, messages, "evaluator").text
            calls += 1
            try:
                return parse_evaluation(text), calls
            except MalformedEvaluation as exc:
                last = exc
        if strict:
            raise MalformedEvaluation(f"evaluator output malformed {calls} time(s): {last}")
        log.warning("%s: corrected response forwarded unscored (%s)", st.task.task_id, last)
        return None, calls

    # -- gating ---------------------------------------------------------------

    def gate_user_turn(self, agent_reply: str) -> UserTurn:
        """Actor, Evaluator, then at most one regeneration.

        A user turn spends at most two actor and two evaluator calls; a
        malformed-evaluation re-query draws on the same budget, so the
        corrected draft may be forwarded without scores.
        """
        st = self.state
        draft = self.actor_respond(agent_reply)
        actor_calls = 1
        scores, evaluator_calls = self.evaluate_response(draft, agent_reply, max_calls=EVALUATOR_CALLS_PER_TURN)
        original, corrected = draft, False
        if not scores.all_pass:
            st.set_feedback(scores.suggestion, draft)
            draft = self.actor_respond(agent_reply)
            actor_calls += 1
            corrected = True
            room = EVALUATOR_CALLS_PER_TURN - evaluator_calls
            rescored, n = (None, 0) if room == 0 else self.evaluate_response(draft, agent_reply, room, strict=False)
            evaluator_calls += n
            scores = rescored
        # feedback only steers the regeneration within this turn
        st.clear_feedback()
        evaluation = {
            "scores": scores.scores if scores else None,
            "suggestion": scores.suggestion if scores else "",
            "average_score": scores.average if scores else None,
            "original_response": original,
            "correction_applied": corrected,
        }
        return UserTurn(
            content=draft,
            evaluation=evaluation,
            actor_calls=actor_calls,
            evaluator_calls=evaluator_calls,
            is_stop=False,
            is_complaint=False,
        )

    def next_message(self, agent_reply: str) -> UserTurn:
        """One full user turn: gating, then hard-mode noise or the static ending."""
        st = self.state
        turn = self.gate_user_turn(agent_reply)
        text = turn.content
        if st.mode is InteractionMode.STATIC:
            ending = self.prompts.ending_sentence
            if not text.rstrip().endswith(ending):
                text = f"{text.rstrip()} {ending}"
        else:
            text = hard_mode_noise(st.mode, text, self.noise)
        turn.content = text
        turn.is_stop = is_stop(text)
        turn.is_complaint = is_complaint(text)
        st.complaints = st.complaints + 1 if turn.is_complaint else 0
        st.turn += 1
        return turn

    # -- summarizer -----------------------------------------------------------

    def summarize_turn(self, agent_reply: str, user_msg: str) -> str:
        st = self.state
        if self.backends.summarizer is None:
            return st.summary
        meta = {
            "role": "summarizer",
            "instruction": st.task.instruction,
            "previous_summary": st.summary,
            "agent_msg": agent_reply,
            "user_msg": user_msg,
            "turn": st.turn,
        }
        prompt = fill(
            self.prompts.summarizer,
            user_instruction=st.task.instruction,
            previous_summary=st.summary,
            agent_response=agent_reply,
            user_response=user_msg,
        )
        messages = [
            ChatMessage(Role.SYSTEM, prompt, metadata=meta),
            ChatMessage(Role.USER, "Return the updated summary.", metadata=meta),
        ]
        text = self._call(self.backends.summarizer, messages, "summarizer").text.strip()
        if count_sentences(text) > 3:
            log.warning("%s: summary exceeds 3 sentences", st.task.task_id)
        st.summary = text
        return text

    def _call(self, backend: ChatBackend, messages: list[ChatMessage], role: str) -> Completion:
        try:
            completion = backend.complete(messages, None)
        except UserBackendError:
            raise
        except BackendError as exc:
            raise UserBackendError(f"{role}: {exc}") from exc
        except Exception as exc:  # configuration or transport bugs in user backends
            if isinstance(exc, (KeyboardInterrupt, SystemExit)):
                raise
            raise UserBackendError(f"{role}: {type(exc).__name__}: {exc}") from exc
        self.usage = self.usage + completion.usage
        return completion


# -- offline backends ---------------------------------------------------------


def _meta(messages: Sequence[ChatMessage]) -> dict[str, Any]:
    return messages[-1].metadata if messages else {}


class TaskScriptActor:
    """Speaks the task's scripted lines in order, then says STOP.

    A revision request repeats the current line, so only fresh turns advance
    the script.  In static mode the static message (or the joined script) is
    returned.
    """

    supports_media = True

    def __init__(self, task: TaskSpec) -> None:
        self.lines = list(task.user_script)
        self.static_message = task.static_message or " ".join(self.lines)
        self.index = -1
        self.calls = 0

    def complete(self, messages, tools=None) -> Completion:
        self.calls += 1
        meta = _meta(messages)
        if meta.get("mode") == InteractionMode.STATIC.value:
            return Completion(self.static_message)
        if not meta.get("revision"):
            self.index += 1
        if 0 <= self.index < len(self.lines):
            return Completion(self.lines[self.index])
        return Completion("STOP")


class AlwaysPassEvaluator:
    supports_media = True

    def __init__(self) -> None:
        self.calls = 0

    def complete(self, messages, tools=None) -> Completion:
        self.calls += 1
        return Completion(json.dumps({"scores": {c: 1 for c in CRITERIA}, "suggestion": ""}))


_PROVIDER_PHRASES = re.compile(
    r"\b(I will help you|I'll help you|I can help you|let me help you|how can I help|"
    r"how may I assist|I will process)\b",
    re.IGNORECASE,
)
_ID_TOKEN = re.compile(r"\b[A-Za-z]+(?:_[A-Za-z0-9]+)*_\d+\b")


class HeuristicEvaluator:
    """Rule-based stand-in for the Evaluator model.

    role_consistency fails on service-provider phrasing; instruction_following
    fails when STOP is mixed with further text; contextual_robustness fails
    when the agent names a different user id and the reply does not restate
    the correct one.  Resilience cannot be judged by rules and always passes.
    """

    supports_media = True

    def __init__(self) -> None:
        self.calls = 0

    def complete(self, messages, tools=None) -> Completion:
        self.calls += 1
        meta = _meta(messages)
        user_msg = meta.get("user_msg", "")
        agent_msg = meta.get("agent_msg", "")
        uid = meta.get("user_id") or extract_user_id(meta.get("instruction", "")) or ""
        scores = {c: 1 for c in CRITERIA}
        tips = []
        if _PROVIDER_PHRASES.search(user_msg):
            scores["role_consistency"] = 0
            tips.append("Speak as the customer stating needs, not as a provider offering help.")
        if is_stop(user_msg) and user_msg.strip() != "STOP":
            scores["instruction_following"] = 0
            tips.append("Output only STOP when every requirement is met; do not add requests.")
        wrong_ids = {t for t in _ID_TOKEN.findall(agent_msg) if uid and normalize_name(t) != normalize_name(uid)}
        if wrong_ids and normalize_name(uid) not in normalize_name(user_msg):
            scores["contextual_robustness"] = 0
            tips.append(f"Correct the agent: your user id is {uid}.")
        return Completion(json.dumps({"scores": scores, "suggestion": " ".join(tips)}))


class TemplateSummarizer:
    """Deterministic summary of the latest exchange in at most three sentences."""

    supports_media = True

    def __init__(self, width: int = 160) -> None:
        self.width = width
        self.calls = 0

    def _clip(self, text: str) -> str:
        flat = " ".join(text.split()).replace('"', "'")
        flat = re.sub(r"[.!?]+(\s|$)", r";\1", flat).rstrip(";")
        return flat if len(flat) <= self.width else flat[: self.width - 3] + "..."

    def complete(self, messages, tools=None) -> Completion:
        self.calls += 1
        meta = _meta(messages)
        turn = int(meta.get("turn", 0))
        return Completion(
            f"{turn} exchange(s) completed so far. "
            f"The agent last said: \"{self._clip(meta.get('agent_msg', ''))}\". "
            f"The user replied: \"{self._clip(meta.get('user_msg', ''))}\"."
        )


class EchoBackend:
    """Returns the content of the final message unchanged."""

    supports_media = True

    def __init__(self) -> None:
        self.calls = 0

    def complete(self, messages, tools=None) -> Completion:
        self.calls += 1
        return Completion(messages[-1].content if messages else "")
