"""Shared builders for scripted episodes and the error-cascade fixtures."""

from __future__ import annotations

import json
from typing import Sequence

from egoharness.agent import FunctionBackend
from egoharness.metrics import TaskOutcome, replay_ground_truth, score_task
from egoharness.orchestrator import EpisodeConfig, Trajectory, run_episode
from egoharness.tasks import TaskSpec
from egoharness.tools import ToolCall
from egoharness.usersim import AlwaysPassEvaluator, TaskScriptActor, TemplateSummarizer, UserBackends, UserSimulator


def batch(*calls: ToolCall | dict) -> str:
    return json.dumps([c.to_dict() if isinstance(c, ToolCall) else c for c in calls])


def scripted_agent(messages: Sequence[str], reply: str = "Done.") -> FunctionBackend:
    """Emits ``messages`` in order, then ``reply`` forever."""
    queue = list(messages)
    return FunctionBackend(lambda m, t: queue.pop(0) if queue else reply)


def run_scripted(pack, task: TaskSpec, agent, mode: str = "easy", **cfg) -> Trajectory:
    sc = pack.scenario(task.scenario_id)
    user = UserSimulator(task, mode, UserBackends(TaskScriptActor(task), AlwaysPassEvaluator(), TemplateSummarizer()))
    return run_episode(task, agent, user, sc.database.copy(), EpisodeConfig(mode=mode, **cfg), sc.registry)


def outcome(pack, task: TaskSpec, traj: Trajectory) -> TaskOutcome:
    sc = pack.scenario(task.scenario_id)
    return score_task(task.ground_truth, traj, replay_ground_truth(task.ground_truth, sc.database, sc.registry), sc.registry)


def _with_user(c: ToolCall, uid: str) -> ToolCall:
    if "user_id" not in c.parameters:
        return c
    return ToolCall(c.tool_name, {**c.parameters, "user_id": uid})


def cascade_fixtures(pack) -> dict[str, tuple[str, Trajectory]]:
    """Seven crafted kitchen trajectories keyed by name, with the expected label."""
    task = next(t for t in pack.tasks if t.task_id == "kitchen-001")
    find, add_menu, add_list = task.ground_truth.tool_calls
    extra = ToolCall("add_recipe_to_menu", {"user_id": "cook_009", "recipe_name": "banana pancake"})
    wrong = [_with_user(c, "cook_090") for c in (find, add_menu, add_list)]
    broken = {"tool_name": "find_recipes_by_ingredient"}
    plans = {
        "shape_broken": ("STRUCTURAL", [batch(broken)]),
        "missed_anchor": (
            "PERCEPTION",
            [batch(ToolCall("find_recipes_by_ingredient", {"ingredient_name": "egg"}), add_menu, add_list)],
        ),
        "wrong_user": ("HALLUCINATION", [batch(*wrong)]),
        "missing_call": ("LOGICAL", [batch(find, add_menu)]),
        "extra_write": ("OVER_OPERATION", [batch(find, add_menu, add_list, extra)]),
        "oracle": ("CORRECT", [batch(find, add_menu, add_list)]),
        "shape_and_wrong_user": ("STRUCTURAL", [batch(broken), batch(*wrong)]),
    }
    return {name: (label, run_scripted(pack, task, scripted_agent(msgs))) for name, (label, msgs) in plans.items()}
