"""Command-line entry point: ``egoharness run|report|validate-scenario|replay-gt``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .errors import HarnessError
from .harness import RunConfig, load_pack, report, run
from .metrics import replay_ground_truth
from .store import load_database, snapshot
from .tasks import load_tasks
from .usersim import InteractionMode


def _modes(text: str) -> list[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    try:
        return [InteractionMode.parse(m).value for m in modes]
    except ValueError:
        raise argparse.ArgumentTypeError(f"modes must be easy, hard or static: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egoharness", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run episodes and write trajectory logs")
    p.add_argument("--config", type=Path, help="run config JSON (defaults: builtin desk pack, oracle agent)")
    p.add_argument("--mode", type=_modes, help="comma-separated subset of easy,hard,static")
    p.add_argument("--seed", type=int)
    p.add_argument("--parallel", type=int)
    p.add_argument("--output", help="output directory for runs")
    p.add_argument("--run-name", help="run directory name instead of a timestamp")
    p.add_argument("--pack", help="scenario pack path or builtin:<name>")
    p.add_argument("--no-report", action="store_true", help="skip writing report files")

    p = sub.add_parser("report", help="aggregate a run directory")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--json", action="store_true", help="print report.json instead of the table")

    p = sub.add_parser("validate-scenario", help="check a scenario database or pack")
    p.add_argument("path", help="database JSON, pack directory, pack.json, or builtin:<name>")
    p.add_argument("--scenario-id")

    p = sub.add_parser("replay-gt", help="replay ground-truth calls and print final digests")
    p.add_argument("task_file", type=Path)
    p.add_argument("--pack", default="builtin:desk", help="pack that provides the scenarios")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {
        "modes": args.mode,
        "seed": args.seed,
        "parallel": args.parallel,
        "output_dir": args.output,
        "run_name": args.run_name,
        "pack": args.pack,
    }
    data = cfg.to_dict()
    data.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig.from_dict(data)
    run_dir = run(cfg)
    print(run_dir)
    if not args.no_report:
        print(report(run_dir).table(), end="")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    bundle = report(args.run_dir)
    if args.json:
        print(json.dumps(bundle.to_dict(), indent=2, sort_keys=True))
    else:
        print(bundle.table(), end="")
    return 0


def _is_pack(path: str) -> bool:
    p = Path(path)
    return path.startswith("builtin:") or p.is_dir() or p.name == "pack.json"


def _cmd_validate(args: argparse.Namespace) -> int:
    if _is_pack(args.path):
        pack = load_pack(args.path)
        for sid, sc in sorted(pack.scenarios.items()):
            sizes = ", ".join(f"{k}={len(v)}" for k, v in sc.database.catalogs.items())
            print(f"{sid}: {sizes}; {len(sc.registry)} tools; dangling={len(sc.database.dangling)}")
        print(f"{len(pack.tasks)} task(s) OK")
        return 0
    db = load_database(args.path, args.scenario_id)
    sizes = ", ".join(f"{k}={len(v)}" for k, v in db.catalogs.items())
    ledgers = ", ".join(f"{k}={len(v)}" for k, v in db.ledgers.items())
    print(f"{db.scenario_id}: {sizes}; ledgers {ledgers or 'none'}")
    for ref in db.dangling:
        print(f"dangling: {ref}")
    print(f"digest {snapshot(db).digest}")
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    pack = load_pack(args.pack)
    failures = 0
    for task in load_tasks(args.task_file):
        sc = pack.scenario(task.scenario_id)
        try:
            digest = replay_ground_truth(task.ground_truth, sc.database, sc.registry)
        except HarnessError as exc:
            failures += 1
            print(f"{task.task_id}: INVALID {exc}")
            continue
        print(f"{task.task_id}: {digest.digest} ({task.ground_truth.G} call(s))")
    return 1 if failures else 0


COMMANDS = {
    "run": _cmd_run,
    "report": _cmd_report,
    "validate-scenario": _cmd_validate,
    "replay-gt": _cmd_replay,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
