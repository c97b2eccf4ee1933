"""Batch runner and reporter.

A run fans episodes out over a thread pool, writes one log per (mode, task)
and a manifest; ``report`` rebuilds every metric from those files alone.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from statistics import mean
from typing import Any, Callable, Iterable

from .agent import BackendProfile, ChatBackend, HttpBackend, ScriptedBackend, noop_agent, oracle_agent
from .errors import ConfigError, CorruptLog, EmptyDataset, GroundTruthInvalid, HarnessError
from .metrics import ErrorLabel, MetricsReport, TaskOutcome, diagnose, match_tool_calls, replay_ground_truth
from .orchestrator import EpisodeConfig, Trajectory, run_episode
from .prompts import PromptSet, default_prompts
from .store import ScenarioDatabase, StateDigest, load_database
from .tasks import GroundTruth, TaskSpec, load_tasks
from .tools.engine import load_toolset
from .tools.schema import ToolRegistry
from .usersim import (
    AlwaysPassEvaluator,
    EchoBackend,
    HeuristicEvaluator,
    InteractionMode,
    NoiseSource,
    TaskScriptActor,
    TemplateSummarizer,
    UserBackends,
    UserSimulator,
)

log = logging.getLogger(__name__)

BUILTIN_PREFIX = "builtin:"
ALL_MODES = (InteractionMode.DYNAMIC_EASY, InteractionMode.DYNAMIC_HARD, InteractionMode.STATIC)


def _assets() -> Path:
    return Path(str(resources.files("egoharness") / "assets"))


def _read_json(path: Path, what: str) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path}: invalid JSON ({exc})") from exc


def _dump(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# -- scenario packs -----------------------------------------------------------


@dataclass
class Scenario:
    scenario_id: str
    database: ScenarioDatabase
    registry: ToolRegistry
    noise: list[str] = field(default_factory=list)


@dataclass
class ScenarioPack:
    name: str
    root: Path
    scenarios: dict[str, Scenario]
    tasks: list[TaskSpec]

    def scenario(self, scenario_id: str) -> Scenario:
        try:
            return self.scenarios[scenario_id]
        except KeyError:
            raise ConfigError(f"unknown scenario {scenario_id!r} in pack {self.name!r}") from None


def _resolve_asset(ref: str, root: Path, kind: str) -> Path:
    """A bare name means a builtin asset; anything else is a path relative to the pack."""
    if ref.endswith(".json") or "/" in ref:
        return (root / ref).resolve()
    return _assets() / kind / f"{ref}.json"


def resolve_pack_path(spec: str | Path) -> Path:
    text = str(spec)
    if text.startswith(BUILTIN_PREFIX):
        path = _assets() / "packs" / text[len(BUILTIN_PREFIX) :]
    else:
        path = Path(text)
    if path.is_dir():
        path = path / "pack.json"
    if not path.is_file():
        raise ConfigError(f"scenario pack not found: {spec}")
    return path


def load_pack(spec: str | Path, task_files: Iterable[str | Path] = ()) -> ScenarioPack:
    manifest_path = resolve_pack_path(spec)
    root = manifest_path.parent
    doc = _read_json(manifest_path, "pack manifest")
    if not isinstance(doc, dict) or not isinstance(doc.get("scenarios"), dict):
        raise ConfigError(f"{manifest_path}: pack manifest needs a 'scenarios' object")
    scenarios = {}
    for sid, entry in doc["scenarios"].items():
        try:
            db = load_database(root / entry["database"], sid)
            registry = load_toolset(_resolve_asset(entry.get("tools", sid), root, "tools"))
        except KeyError as exc:
            raise ConfigError(f"{manifest_path}: scenario {sid!r} lacks {exc}") from None
        except HarnessError as exc:
            raise ConfigError(f"{manifest_path}: scenario {sid!r}: {exc}") from exc
        if db.dangling:
            log.warning("%s: dangling ledger references: %s", sid, ", ".join(db.dangling))
        noise_ref = entry.get("noise")
        noise = _read_json(_resolve_asset(noise_ref, root, "noise"), "noise pool") if noise_ref else []
        scenarios[sid] = Scenario(sid, db, registry, list(noise))
    files = list(task_files) or [root / t for t in doc.get("tasks", [])]
    tasks: list[TaskSpec] = []
    for path in files:
        tasks.extend(load_tasks(path))
    ids = [t.task_id for t in tasks]
    if len(ids) != len(set(ids)):
        raise ConfigError("duplicate task ids across task files")
    for task in tasks:
        if task.scenario_id not in scenarios:
            raise ConfigError(f"task {task.task_id}: unknown scenario {task.scenario_id!r}")
        _check_anchors(task, scenarios[task.scenario_id].registry)
    return ScenarioPack(doc.get("name", root.name), root, scenarios, tasks)


def _check_anchors(task: TaskSpec, registry: ToolRegistry) -> None:
    """Each perception anchor must be satisfiable by the task's own read calls."""
    gt = task.ground_truth
    probe = Trajectory(task.task_id, task.scenario_id, InteractionMode.DYNAMIC_EASY, tool_calls_flat=list(gt.tool_calls))
    diag = diagnose(gt, probe, True, read_tools=registry.read_tools(), unordered=registry.unordered_params())
    if diag.label is ErrorLabel.PERCEPTION:
        raise ConfigError(f"task {task.task_id}: ground truth does not satisfy its anchors ({diag.evidence})")


# -- configuration ------------------------------------------------------------

BackendFactory = Callable[[dict[str, Any], TaskSpec], ChatBackend]


def _http(spec: dict[str, Any], task: TaskSpec) -> ChatBackend:
    profile = spec.get("profile")
    if isinstance(profile, str):
        return HttpBackend(BackendProfile.load(profile))
    if isinstance(profile, dict):
        return HttpBackend(BackendProfile.from_dict(profile))
    raise ConfigError("http backend needs a 'profile' path or object")


BACKENDS: dict[str, BackendFactory] = {
    "oracle": lambda s, t: oracle_agent(t.ground_truth, batch_size=s.get("batch_size")),
    "noop": lambda s, t: noop_agent(**({"reply": s["reply"]} if "reply" in s else {})),
    "scripted": lambda s, t: ScriptedBackend(s.get("playbook", [])),
    "http": _http,
    "task_script": lambda s, t: TaskScriptActor(t),
    "always_pass": lambda s, t: AlwaysPassEvaluator(),
    "heuristic": lambda s, t: HeuristicEvaluator(),
    "template": lambda s, t: TemplateSummarizer(),
    "echo": lambda s, t: EchoBackend(),
}

DEFAULT_BACKENDS = {
    "agent": {"type": "oracle"},
    "actor": {"type": "task_script"},
    "evaluator": {"type": "heuristic"},
    "summarizer": {"type": "template"},
}


def make_backend(spec: dict[str, Any], task: TaskSpec) -> ChatBackend:
    kind = spec.get("type")
    if kind not in BACKENDS:
        raise ConfigError(f"unknown backend type {kind!r}; expected one of {sorted(BACKENDS)}")
    return BACKENDS[kind](spec, task)


@dataclass
class RunConfig:
    pack: str = "builtin:desk"
    tasks: list[str] = field(default_factory=list)
    task_ids: list[str] = field(default_factory=list)
    modes: list[str] = field(default_factory=lambda: [m.value for m in ALL_MODES])
    episode: dict[str, Any] = field(default_factory=dict)
    backends: dict[str, dict[str, Any]] = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_BACKENDS)))
    model: str = ""
    output_dir: str = "runs"
    run_name: str | None = None
    seed: int = 0
    parallel: int = 4
    prompts_dir: str | None = None

    def __post_init__(self) -> None:
        try:
            self.modes = [InteractionMode.parse(m).value for m in self.modes]
        except ValueError as exc:
            raise ConfigError(f"unknown mode: {exc}") from None
        if not self.modes:
            raise ConfigError("at least one mode is required")
        if not isinstance(self.parallel, int) or self.parallel < 1:
            raise ConfigError("parallel must be a positive integer")
        merged = json.loads(json.dumps(DEFAULT_BACKENDS))
        for role, spec in self.backends.items():
            if role not in merged:
                raise ConfigError(f"unknown backend role {role!r}")
            if not isinstance(spec, dict) or "type" not in spec:
                raise ConfigError(f"backend {role!r} needs a 'type'")
            merged[role] = spec
        self.backends = merged
        if not self.model:
            self.model = self.backends["agent"].get("model") or self.backends["agent"]["type"]
        try:
            self.episode_config(InteractionMode.DYNAMIC_EASY)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid episode settings: {exc}") from None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        cfg = cls.from_dict(_read_json(Path(path), "run config"))
        base = Path(path).parent
        # Relative paths in a config file are relative to that file.
        if not cfg.pack.startswith(BUILTIN_PREFIX) and not Path(cfg.pack).is_absolute():
            cfg.pack = str(base / cfg.pack)
        cfg.tasks = [t if Path(t).is_absolute() else str(base / t) for t in cfg.tasks]
        if cfg.prompts_dir and not Path(cfg.prompts_dir).is_absolute():
            cfg.prompts_dir = str(base / cfg.prompts_dir)
        return cfg

    def episode_config(self, mode: InteractionMode) -> EpisodeConfig:
        return EpisodeConfig(mode=mode, **self.episode)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


# -- run ----------------------------------------------------------------------


def noise_seed(seed: int, task_id: str, mode: InteractionMode) -> str:
    return f"{seed}:{task_id}:{mode.value}"


def run_task(
    task: TaskSpec,
    mode: InteractionMode,
    scenario: Scenario,
    cfg: RunConfig,
    gt_digest: StateDigest,
    prompts: PromptSet,
) -> Trajectory:
    backends = cfg.backends
    user_backends = UserBackends(
        actor=make_backend(backends["actor"], task),
        evaluator=make_backend(backends["evaluator"], task),
        summarizer=make_backend(backends["summarizer"], task),
    )
    noise = None
    if mode is InteractionMode.DYNAMIC_HARD and scenario.noise:
        noise = NoiseSource(scenario.noise, seed=noise_seed(cfg.seed, task.task_id, mode))
    user = UserSimulator(task, mode, user_backends, prompts, noise)
    return run_episode(
        task,
        make_backend(backends["agent"], task),
        user,
        scenario.database.copy(),
        cfg.episode_config(mode),
        scenario.registry,
        prompts=prompts,
        model=cfg.model,
        gt_digest=gt_digest,
    )


def _failure_log(task: TaskSpec, mode: InteractionMode, cfg: RunConfig, status: str, error: str) -> dict[str, Any]:
    return {
        "task_id": task.task_id,
        "scenario_id": task.scenario_id,
        "mode": mode.value,
        "model": cfg.model,
        "status": status,
        "error": error,
        "ground_truth": task.ground_truth.to_dict(),
    }


def _new_run_dir(cfg: RunConfig) -> Path:
    base = Path(cfg.output_dir)
    name = cfg.run_name or dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    path, n = base / name, 1
    while path.exists():
        path, n = base / f"{name}-{n}", n + 1
    path.mkdir(parents=True)
    return path


def run(cfg: RunConfig) -> Path:
    """Execute every selected (mode, task) episode and return the run directory."""
    pack = load_pack(cfg.pack, cfg.tasks)
    tasks = pack.tasks
    if cfg.task_ids:
        wanted = set(cfg.task_ids)
        tasks = [t for t in tasks if t.task_id in wanted]
        missing = wanted - {t.task_id for t in tasks}
        if missing:
            raise ConfigError(f"unknown task ids: {sorted(missing)}")
    if not tasks:
        raise ConfigError("no tasks selected")
    prompts = PromptSet.from_dir(cfg.prompts_dir) if cfg.prompts_dir else default_prompts()
    run_dir = _new_run_dir(cfg)

    gt_digests: dict[str, StateDigest | None] = {}
    gt_errors: dict[str, str] = {}
    for task in tasks:
        scenario = pack.scenario(task.scenario_id)
        try:
            gt_digests[task.task_id] = replay_ground_truth(task.ground_truth, scenario.database, scenario.registry)
        except GroundTruthInvalid as exc:
            gt_errors[task.task_id] = str(exc)
            log.error("%s", exc)

    jobs = [(m, t) for m in (InteractionMode.parse(x) for x in cfg.modes) for t in tasks]

    def work(job: tuple[InteractionMode, TaskSpec]) -> tuple[InteractionMode, TaskSpec, dict[str, Any]]:
        mode, task = job
        if task.task_id in gt_errors:
            return mode, task, _failure_log(task, mode, cfg, "invalid_ground_truth", gt_errors[task.task_id])
        try:
            traj = run_task(task, mode, pack.scenario(task.scenario_id), cfg, gt_digests[task.task_id], prompts)
        except Exception as exc:  # isolate harness bugs to the task that hit them
            log.exception("%s/%s failed", mode.value, task.task_id)
            return mode, task, _failure_log(task, mode, cfg, "failed", f"{type(exc).__name__}: {exc}")
        return mode, task, {**traj.to_log(), "status": "ok"}

    with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
        results = list(pool.map(work, jobs))

    counts = {"ok": 0, "failed": 0, "invalid_ground_truth": 0, "agent_error": 0}
    for mode, task, doc in results:
        out = run_dir / mode.value / f"{task.task_id}.json"
        out.parent.mkdir(exist_ok=True)
        out.write_text(_dump(doc), encoding="utf-8")
        counts[doc["status"]] += 1
        if doc.get("halted_reason") == "AGENT_ERROR":
            counts["agent_error"] += 1

    manifest = {
        "created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "pack": pack.name,
        "modes": cfg.modes,
        "tasks": [t.task_id for t in tasks],
        "counts": counts,
        "scenarios": {
            sid: {"read_tools": sorted(s.registry.read_tools()), "unordered": s.registry.unordered_params()}
            for sid, s in sorted(pack.scenarios.items())
        },
    }
    (run_dir / "manifest.json").write_text(_dump(manifest), encoding="utf-8")
    return run_dir


# -- report -------------------------------------------------------------------


@dataclass(frozen=True)
class EfficiencyStats:
    model: str
    episodes: int
    input_tokens: float
    output_tokens: float
    rounds: float
    tool_calls: float

    @classmethod
    def from_trajectories(cls, model: str, trajs: list[Trajectory]) -> "EfficiencyStats":
        return cls(
            model=model,
            episodes=len(trajs),
            input_tokens=mean(t.usage.input_tokens for t in trajs),
            output_tokens=mean(t.usage.output_tokens for t in trajs),
            rounds=mean(t.rounds_count for t in trajs),
            tool_calls=mean(t.tool_calls_count for t in trajs),
        )


@dataclass
class ReportBundle:
    overall: MetricsReport
    groups: dict[tuple[str, str, str], MetricsReport]
    by_mode: dict[tuple[str, str], MetricsReport]
    efficiency: dict[str, EfficiencyStats]
    corrupt: list[str]
    skipped: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        def block(r: MetricsReport) -> dict[str, Any]:
            return {**r.aggregates(), "errors": dict(r.histogram)}

        return {
            "overall": block(self.overall),
            "by_mode": [
                {"model": m, "mode": mode, **block(r)} for (m, mode), r in sorted(self.by_mode.items())
            ],
            "groups": [
                {"model": m, "scenario": s, "mode": mode, **block(r)}
                for (m, s, mode), r in sorted(self.groups.items())
            ],
            "efficiency": [asdict(e) for _, e in sorted(self.efficiency.items())],
            "corrupt_logs": self.corrupt,
            "skipped": self.skipped,
            "tasks": [o.to_dict() for o in self.overall.outcomes],
        }

    def table(self) -> str:
        modes = [m.value for m in ALL_MODES if any(k[1] == m.value for k in self.by_mode)]
        cols = ["Micro", "Tool", "Result", "Joint"]
        header = f"{'Model':<20} {'Scenario':<12}" + "".join(f" | {m:^31}" for m in modes)
        sub = f"{'':<20} {'':<12}" + "".join(" | " + " ".join(f"{c:>7}" for c in cols) for _ in modes)
        lines = [header, sub, "-" * len(sub)]

        def cells(r: MetricsReport | None) -> str:
            if r is None:
                return " | " + " ".join(f"{'-':>7}" for _ in cols)
            vals = (r.micro_acc, r.tool_succ, r.result_succ, r.joint_succ)
            return " | " + " ".join(f"{100 * v:7.2f}" for v in vals)

        models = sorted({k[0] for k in self.by_mode})
        scenarios = sorted({k[1] for k in self.groups})
        for model in models:
            for sid in scenarios:
                if any((model, sid, m) in self.groups for m in modes):
                    lines.append(
                        f"{model:<20} {sid:<12}" + "".join(cells(self.groups.get((model, sid, m))) for m in modes)
                    )
            lines.append(f"{model:<20} {'Avg.':<12}" + "".join(cells(self.by_mode.get((model, m))) for m in modes))
        lines.append("")
        lines.append(f"{'Model':<20} {'Episodes':>8} {'In tok':>10} {'Out tok':>10} {'Rounds':>7} {'Calls':>7}")
        for model, e in sorted(self.efficiency.items()):
            lines.append(
                f"{model:<20} {e.episodes:>8} {e.input_tokens:>10.1f} {e.output_tokens:>10.1f}"
                f" {e.rounds:>7.2f} {e.tool_calls:>7.2f}"
            )
        lines.append("")
        lines.append("Errors: " + ", ".join(f"{k}={v}" for k, v in self.overall.histogram.items()))
        if self.corrupt:
            lines.append(f"Corrupt logs skipped: {len(self.corrupt)}")
        if any(self.skipped.values()):
            lines.append("Skipped: " + ", ".join(f"{k}={v}" for k, v in sorted(self.skipped.items()) if v))
        return "\n".join(lines) + "\n"


class _ManifestKinds:
    """Read-tool and unordered-parameter hints recorded in the run manifest."""

    def __init__(self, scenarios: dict[str, Any]) -> None:
        self.scenarios = scenarios

    def read_tools(self, sid: str) -> list[str] | None:
        entry = self.scenarios.get(sid)
        return entry.get("read_tools") if entry else None

    def unordered(self, sid: str) -> dict[str, list[str]] | None:
        entry = self.scenarios.get(sid)
        return entry.get("unordered") if entry else None


def _parse_log(path: Path) -> dict[str, Any]:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptLog(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or "status" not in doc or "task_id" not in doc:
        raise CorruptLog(f"{path}: not a trajectory log")
    return doc


def _outcome(doc: dict[str, Any], kinds: _ManifestKinds) -> tuple[TaskOutcome, Trajectory]:
    traj = Trajectory.from_log(doc)
    gt = GroundTruth.from_dict(doc["ground_truth"], traj.task_id)
    sid = traj.scenario_id
    unordered = kinds.unordered(sid)
    report = match_tool_calls(gt.tool_calls, traj.tool_calls_flat, unordered)
    result_ok = traj.gt_digest is not None and traj.final_digest == traj.gt_digest
    diag = diagnose(gt, traj, result_ok, read_tools=kinds.read_tools(sid), unordered=unordered, report=report)
    outcome = TaskOutcome(
        task_id=traj.task_id,
        scenario_id=sid,
        mode=traj.mode.value,
        model=traj.model,
        G=report.G,
        M=report.M,
        result_succ=result_ok,
        label=diag.label,
        evidence=diag.evidence,
        halted_reason=traj.halted_reason.value if traj.halted_reason else None,
    )
    return outcome, traj


def report(run_dir: str | Path, write: bool = True) -> ReportBundle:
    """Aggregate a run directory; corrupt logs are skipped with a warning and counted."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory not found: {run_dir}")
    manifest_path = run_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.is_file() else {}
    kinds = _ManifestKinds(manifest.get("scenarios", {}))
    outcomes: list[TaskOutcome] = []
    trajs: dict[str, list[Trajectory]] = {}
    corrupt: list[str] = []
    skipped = {"failed": 0, "invalid_ground_truth": 0}
    for path in sorted(run_dir.glob("*/*.json")):
        rel = str(path.relative_to(run_dir))
        try:
            doc = _parse_log(path)
            if doc["status"] != "ok":
                skipped[doc["status"]] = skipped.get(doc["status"], 0) + 1
                continue
            outcome, traj = _outcome(doc, kinds)
        except (CorruptLog, HarnessError, KeyError, TypeError, ValueError) as exc:
            log.warning("skipping corrupt log %s: %s", rel, exc)
            corrupt.append(rel)
            continue
        outcomes.append(outcome)
        trajs.setdefault(traj.model, []).append(traj)
    if not outcomes:
        raise EmptyDataset(f"{run_dir}: no scorable trajectory logs")
    outcomes.sort(key=lambda o: (o.model, o.mode, o.scenario_id, o.task_id))

    groups: dict[tuple[str, str, str], list[TaskOutcome]] = {}
    by_mode: dict[tuple[str, str], list[TaskOutcome]] = {}
    for o in outcomes:
        groups.setdefault((o.model, o.scenario_id, o.mode), []).append(o)
        by_mode.setdefault((o.model, o.mode), []).append(o)
    bundle = ReportBundle(
        overall=MetricsReport.from_outcomes(outcomes),
        groups={k: MetricsReport.from_outcomes(v) for k, v in groups.items()},
        by_mode={k: MetricsReport.from_outcomes(v) for k, v in by_mode.items()},
        efficiency={m: EfficiencyStats.from_trajectories(m, ts) for m, ts in trajs.items()},
        corrupt=corrupt,
        skipped=skipped,
    )
    if write:
        (run_dir / "report.json").write_text(_dump(bundle.to_dict()), encoding="utf-8")
        (run_dir / "report.txt").write_text(bundle.table(), encoding="utf-8")
    return bundle
