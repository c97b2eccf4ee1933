"""Deterministic evaluation environment for interactive tool-using agents."""

from __future__ import annotations

from .agent import GREETING, ChatMessage, Completion, HttpBackend, BackendProfile, Role, ScriptedBackend, oracle_agent
from .harness import RunConfig, load_pack, report, run
from .metrics import ErrorLabel, MetricsReport, classify_error, compute_metrics, match_tool_calls, replay_ground_truth
from .orchestrator import EpisodeConfig, HaltReason, Trajectory, parse_agent_message, run_episode
from .store import ScenarioDatabase, StateDigest, load_database, reset, snapshot, states_equivalent
from .tasks import GroundTruth, TaskSpec, load_tasks
from .tools import ToolCall, ToolResult, execute, load_toolset
from .usersim import InteractionMode, UserBackends, UserSimulator

__version__ = "0.1.0"

__all__ = [
    "GREETING",
    "BackendProfile",
    "ChatMessage",
    "Completion",
    "EpisodeConfig",
    "ErrorLabel",
    "GroundTruth",
    "HaltReason",
    "HttpBackend",
    "InteractionMode",
    "MetricsReport",
    "Role",
    "RunConfig",
    "ScenarioDatabase",
    "ScriptedBackend",
    "StateDigest",
    "TaskSpec",
    "ToolCall",
    "ToolResult",
    "Trajectory",
    "UserBackends",
    "UserSimulator",
    "classify_error",
    "compute_metrics",
    "execute",
    "load_database",
    "load_pack",
    "load_tasks",
    "load_toolset",
    "match_tool_calls",
    "oracle_agent",
    "parse_agent_message",
    "replay_ground_truth",
    "report",
    "reset",
    "run",
    "run_episode",
    "snapshot",
    "states_equivalent",
]
