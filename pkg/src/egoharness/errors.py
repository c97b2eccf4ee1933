"""Exception hierarchy for egoharness.

Everything raised on purpose by the harness derives from ``HarnessError`` so
callers can isolate per-task failures with a single ``except`` clause.
"""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for all harness errors."""


# scenario-store


class SchemaError(HarnessError):
    """A scenario document is missing a field or has a mistyped one."""


class IntegrityError(HarnessError):
    """A scenario document parses but violates a data invariant."""


class ScenarioMismatch(HarnessError):
    """Two databases from different scenarios were combined."""


# tool-engine


class ToolError(HarnessError):
    """Base class for tool registration and execution failures."""

    code = "TOOL_ERROR"


class DuplicateTool(ToolError):
    code = "DUPLICATE_TOOL"


class UnknownTool(ToolError):
    code = "UNKNOWN_TOOL"


class MissingParameter(ToolError):
    code = "MISSING_PARAMETER"


class InvalidParameter(ToolError):
    code = "INVALID_PARAMETER"


class ToolExecutionError(ToolError):
    """Raised by a handler to reject a call; the database is left untouched."""

    code = "EXECUTION_ERROR"


# agent / user backends


class BackendError(HarnessError):
    """A chat backend failed to produce a usable completion."""


class TransportError(BackendError):
    """Network-level failure or retryable HTTP status."""


class ProtocolError(BackendError):
    """The backend answered, but not in the shape its profile promised."""


class AgentBackendError(BackendError):
    """Wraps a failure of the agent under test's backend."""


class UserBackendError(BackendError):
    """Wraps a failure of one of the simulated-user backends."""


class MalformedEvaluation(UserBackendError):
    """Evaluator output is not the strict scores object."""


# validation / harness


class GroundTruthInvalid(HarnessError):
    """Replaying a task's ground-truth calls did not succeed cleanly."""


class EmptyDataset(HarnessError):
    pass


class ConfigError(HarnessError):
    pass


class CorruptLog(HarnessError):
    pass
