"""Process and result validation, dataset metrics and the root-cause cascade.

Process success asks whether every ground-truth call appears among the
agent's executed calls; result success compares the final database digest
with the digest of a ground-truth replay.  A failed task is attributed to the
first firing predicate of c1..c5.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Collection, Iterable, Mapping, Sequence

from .errors import EmptyDataset, GroundTruthInvalid, ToolError
from .matching import DEFAULT_JACCARD, fuzzy_equal
from .orchestrator import Trajectory
from .store import ScenarioDatabase, StateDigest, normalize_name, snapshot
from .tasks import GroundTruth
from .tools.calls import ToolCall
from .tools.engine import execute
from .tools.schema import ToolRegistry
from .usersim import InteractionMode

REL_TOL = 1e-6

UnorderedMap = Mapping[str, Collection[str]]


# -- equality -----------------------------------------------------------------


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def values_equal(gt: Any, agent: Any, unordered: bool = False) -> bool:
    """Ground-truth value ``gt`` against agent value ``agent``.

    Strings compare after name normalization, numbers within a relative
    tolerance of 1e-6, objects on the ground-truth keys only, and lists
    element-wise (as multisets when ``unordered``).
    """
    if _is_number(gt) and _is_number(agent):
        return math.isclose(float(gt), float(agent), rel_tol=REL_TOL, abs_tol=0.0) or gt == agent
    if isinstance(gt, str) and isinstance(agent, str):
        return normalize_name(gt) == normalize_name(agent)
    if isinstance(gt, bool) or isinstance(agent, bool):
        return gt is agent
    if isinstance(gt, dict) and isinstance(agent, dict):
        return all(k in agent and values_equal(v, agent[k], unordered) for k, v in gt.items())
    if isinstance(gt, list) and isinstance(agent, list):
        if len(gt) != len(agent):
            return False
        if not unordered:
            return all(values_equal(a, b, unordered) for a, b in zip(gt, agent))
        edges = [[j for j, b in enumerate(agent) if values_equal(a, b, unordered)] for a in gt]
        return len(_max_matching(edges, len(agent))) == len(gt)
    return gt is None and agent is None


def calls_equal(gt: ToolCall, agent: ToolCall, unordered: UnorderedMap | None = None) -> bool:
    """Same tool and every ground-truth parameter matched; extra agent parameters are ignored."""
    if normalize_name(gt.tool_name) != normalize_name(agent.tool_name):
        return False
    name = normalize_name(gt.tool_name)
    flags = {p for k, v in (unordered or {}).items() if normalize_name(k) == name for p in v}
    return all(
        key in agent.parameters and values_equal(value, agent.parameters[key], key in flags)
        for key, value in gt.parameters.items()
    )


# -- matching -----------------------------------------------------------------


def _max_matching(edges: Sequence[Sequence[int]], n_right: int) -> list[tuple[int, int]]:
    """Kuhn's augmenting-path maximum bipartite matching; returns (left, right) pairs."""
    owner = [-1] * n_right

    def augment(u: int, seen: list[bool]) -> bool:
        for v in edges[u]:
            if seen[v]:
                continue
            seen[v] = True
            if owner[v] == -1 or augment(owner[v], seen):
                owner[v] = u
                return True
        return False

    for u in range(len(edges)):
        augment(u, [False] * n_right)
    return sorted((u, v) for v, u in enumerate(owner) if u != -1)


@dataclass(frozen=True)
class MatchReport:
    matched_pairs: tuple[tuple[int, int], ...]
    G: int

    @property
    def M(self) -> int:
        return len(self.matched_pairs)

    @property
    def delta(self) -> int:
        return self.G - self.M

    @property
    def contained(self) -> bool:
        return self.delta == 0


def match_tool_calls(
    gt: Sequence[ToolCall], agent: Sequence[ToolCall], unordered: UnorderedMap | None = None
) -> MatchReport:
    """Injective maximum matching of ground-truth calls onto agent calls.

    Parameter-subset equality is not transitive, so a greedy first-fit pass
    can undercount; augmenting paths give the true maximum.
    """
    edges = [[j for j, a in enumerate(agent) if calls_equal(g, a, unordered)] for g in gt]
    return MatchReport(tuple(_max_matching(edges, len(agent))), len(gt))


# -- error cascade ------------------------------------------------------------


class ErrorLabel(str, Enum):
    STRUCTURAL = "STRUCTURAL"
    PERCEPTION = "PERCEPTION"
    HALLUCINATION = "HALLUCINATION"
    LOGICAL = "LOGICAL"
    OVER_OPERATION = "OVER_OPERATION"
    CORRECT = "CORRECT"


_QUERY_PREFIXES = ("get_", "find_", "list_", "search_", "check_", "count_", "query_")


def _is_query(name: str, read_tools: Collection[str] | None) -> bool:
    key = normalize_name(name)
    if read_tools is not None:
        return key in {normalize_name(t) for t in read_tools}
    return key.startswith(_QUERY_PREFIXES)


def _values_of(value: Any) -> list[str]:
    if isinstance(value, list):
        return [s for v in value for s in _values_of(v)]
    if isinstance(value, dict):
        return [s for v in value.values() for s in _values_of(v)]
    return [str(value)] if value is not None else []


def _param_values(params: Mapping[str, Any], key: str) -> list[str]:
    """Values under ``key`` at the top level or inside nested item objects."""
    out: list[str] = []
    for k, v in params.items():
        if k == key:
            out.extend(_values_of(v))
        elif isinstance(v, list):
            for item in v:
                if isinstance(item, dict):
                    out.extend(_param_values(item, key))
    return out


@dataclass(frozen=True)
class Diagnosis:
    label: ErrorLabel
    evidence: str = ""


def diagnose(
    gt: GroundTruth,
    traj: Trajectory,
    result_correct: bool,
    *,
    read_tools: Collection[str] | None = None,
    unordered: UnorderedMap | None = None,
    threshold: float = DEFAULT_JACCARD,
    report: MatchReport | None = None,
) -> Diagnosis:
    report = report or match_tool_calls(gt.tool_calls, traj.tool_calls_flat, unordered)
    calls = traj.tool_calls_flat
    # the cascade attributes failures only; a jointly successful task is CORRECT
    if report.delta == 0 and result_correct:
        return Diagnosis(ErrorLabel.CORRECT)

    # c1: malformed emissions, silence, or a static-mode question instead of action
    if traj.malformed_calls:
        first = traj.malformed_calls[0]
        return Diagnosis(ErrorLabel.STRUCTURAL, f"malformed call ({first['fault']}) at turn {first['turn']}")
    if traj.format_violations and report.delta >= 1:
        return Diagnosis(ErrorLabel.STRUCTURAL, f"tool JSON mixed with prose at turn {traj.format_violations[0]}")
    if not calls and gt.G >= 1:
        return Diagnosis(ErrorLabel.STRUCTURAL, "no tool call emitted")
    last = traj.last_agent_reply
    if (
        traj.mode is InteractionMode.STATIC
        and report.delta >= 1
        and last
        and "?" in last
        and traj.calls_after_last_reply == 0
    ):
        return Diagnosis(ErrorLabel.STRUCTURAL, f"static-mode question to the user: {last!r}")

    # c2: every anchor value must be queried by some read call
    queries = [c for c in calls if _is_query(c.tool_name, read_tools)]
    for anchor in gt.perception_anchors:
        seen = [v for q in queries for v in _param_values(q.parameters, anchor.key)]
        for expected in anchor.values:
            if not any(fuzzy_equal(v, expected, threshold) or fuzzy_equal(expected, v, threshold) for v in seen):
                return Diagnosis(ErrorLabel.PERCEPTION, f"anchor {anchor.key}={expected!r} never queried")

    # c3: identity hallucination
    target = normalize_name(gt.user_id)
    for call in calls:
        if "user_id" in call.parameters and normalize_name(str(call.parameters["user_id"])) != target:
            return Diagnosis(
                ErrorLabel.HALLUCINATION, f"{call.tool_name} used user_id {call.parameters['user_id']!r}"
            )

    # c4, c5
    if report.delta >= 1:
        return Diagnosis(ErrorLabel.LOGICAL, f"call deficit {report.delta} of {report.G}")
    if not result_correct:
        return Diagnosis(ErrorLabel.OVER_OPERATION, "all ground-truth calls matched but final state differs")
    return Diagnosis(ErrorLabel.CORRECT)


def classify_error(
    gt: GroundTruth,
    traj: Trajectory,
    result_correct: bool,
    *,
    read_tools: Collection[str] | None = None,
    unordered: UnorderedMap | None = None,
    threshold: float = DEFAULT_JACCARD,
) -> ErrorLabel:
    return diagnose(
        gt, traj, result_correct, read_tools=read_tools, unordered=unordered, threshold=threshold
    ).label


# -- ground-truth replay ------------------------------------------------------


def replay_ground_truth(gt: GroundTruth, pristine: ScenarioDatabase, registry: ToolRegistry) -> StateDigest:
    """Execute the ground-truth calls on a copy; any failing call is an annotation bug."""
    db = pristine.copy()
    for i, call in enumerate(gt.tool_calls):
        try:
            result, _ = execute(db, call, registry, strict=True)
        except ToolError as exc:
            raise GroundTruthInvalid(f"{gt.task_id}: call {i} ({call.tool_name}) failed: {exc}") from exc
        if not result.ok:
            raise GroundTruthInvalid(f"{gt.task_id}: call {i} ({call.tool_name}) failed: {result.message}")
    return snapshot(db)


# -- dataset metrics ----------------------------------------------------------


@dataclass(frozen=True)
class TaskOutcome:
    task_id: str
    scenario_id: str
    mode: str
    model: str
    G: int
    M: int
    result_succ: bool
    label: ErrorLabel | None = None
    evidence: str = ""
    halted_reason: str | None = None

    @property
    def delta(self) -> int:
        return self.G - self.M

    @property
    def tool_succ(self) -> bool:
        return self.delta == 0

    @property
    def joint_succ(self) -> bool:
        return self.tool_succ and self.result_succ

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "scenario_id": self.scenario_id,
            "mode": self.mode,
            "model": self.model,
            "G": self.G,
            "M": self.M,
            "delta": self.delta,
            "tool_succ": self.tool_succ,
            "result_succ": self.result_succ,
            "joint_succ": self.joint_succ,
            "label": self.label.value if self.label else None,
            "evidence": self.evidence,
            "halted_reason": self.halted_reason,
        }


@dataclass(frozen=True)
class MetricsReport:
    outcomes: tuple[TaskOutcome, ...]
    tool_succ: float
    micro_acc: float
    result_succ: float
    joint_succ: float
    histogram: dict[str, int] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.outcomes)

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[TaskOutcome]) -> "MetricsReport":
        rows = tuple(outcomes)
        if not rows:
            raise EmptyDataset("no tasks to score")
        n = len(rows)
        total_g = sum(r.G for r in rows)
        # With no ground-truth calls anywhere there is nothing to miss.
        micro = sum(r.M for r in rows) / total_g if total_g else 1.0
        labels = Counter(r.label.value for r in rows if r.label is not None)
        return cls(
            outcomes=rows,
            tool_succ=sum(r.tool_succ for r in rows) / n,
            micro_acc=micro,
            result_succ=sum(r.result_succ for r in rows) / n,
            joint_succ=sum(r.joint_succ for r in rows) / n,
            histogram={label.value: labels.get(label.value, 0) for label in ErrorLabel},
        )

    def aggregates(self) -> dict[str, float]:
        return {
            "n": self.n,
            "ToolSucc": self.tool_succ,
            "MicroAcc": self.micro_acc,
            "ResultSucc": self.result_succ,
            "JointSucc": self.joint_succ,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.aggregates(),
            "errors": dict(self.histogram),
            "tasks": [r.to_dict() for r in self.outcomes],
        }


def score_task(
    gt: GroundTruth,
    traj: Trajectory,
    gt_digest: StateDigest | None,
    registry: ToolRegistry | None = None,
) -> TaskOutcome:
    unordered = registry.unordered_params() if registry is not None else None
    read_tools = registry.read_tools() if registry is not None else None
    report = match_tool_calls(gt.tool_calls, traj.tool_calls_flat, unordered)
    digest = gt_digest or traj.gt_digest
    result_ok = digest is not None and traj.final_digest is not None and traj.final_digest == digest
    diag = diagnose(gt, traj, result_ok, read_tools=read_tools, unordered=unordered, report=report)
    return TaskOutcome(
        task_id=traj.task_id,
        scenario_id=traj.scenario_id,
        mode=traj.mode.value,
        model=traj.model,
        G=report.G,
        M=report.M,
        result_succ=result_ok,
        label=diag.label,
        evidence=diag.evidence,
        halted_reason=traj.halted_reason.value if traj.halted_reason else None,
    )


def compute_metrics(
    tasks: Iterable[tuple[GroundTruth, Trajectory, StateDigest | None]],
    registry: ToolRegistry | Mapping[str, ToolRegistry] | None = None,
) -> MetricsReport:
    """Aggregate ToolSucc, MicroAcc, ResultSucc and JointSucc over (gt, trajectory, replay digest) rows.

    ``registry`` may be one registry or a map from scenario id to registry; it
    supplies unordered list parameters and read-tool kinds.
    """
    outcomes = []
    for gt, traj, digest in tasks:
        reg = registry.get(traj.scenario_id) if isinstance(registry, Mapping) else registry
        outcomes.append(score_task(gt, traj, digest, reg))
    return MetricsReport.from_outcomes(outcomes)
