from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

from egoharness.cli import main
from egoharness.errors import ConfigError, EmptyDataset
from egoharness.harness import RunConfig, load_pack, report, run

RETAIL = ["retail-001", "retail-002", "retail-003", "retail-004", "retail-005", "retail-006"]


def _cfg(tmp_path, **kw):
    kw.setdefault("output_dir", str(tmp_path / "runs"))
    kw.setdefault("parallel", 2)
    return RunConfig.from_dict(kw)


def _logs(run_dir: Path) -> dict[str, bytes]:
    return {str(p.relative_to(run_dir)): p.read_bytes() for p in sorted(run_dir.glob("*/*.json"))}


# -- packs and config -------------------------------------------------------------


def test_builtin_pack_shape(desk_pack):
    assert set(desk_pack.scenarios) == {"retail", "restaurant", "order", "kitchen"}
    assert len(desk_pack.tasks) >= 10
    assert sum(len(r) for r in desk_pack.scenario("retail").database.catalogs.values()) >= 10


def test_unknown_pack_and_scenario(desk_pack, tmp_path):
    with pytest.raises(ConfigError):
        load_pack(tmp_path / "nowhere")
    with pytest.raises(ConfigError):
        desk_pack.scenario("airline")


def test_run_config_rejects_bad_values(tmp_path):
    for bad in [{"colour": 1}, {"modes": ["medium"]}, {"modes": []}, {"parallel": 0}, {"episode": {"max_tool_calls": 0}}, {"backends": {"judge": {"type": "oracle"}}}]:
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)


def test_run_config_paths_relative_to_file(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"pack": "mypack", "tasks": ["extra.json"]}))
    cfg = RunConfig.load(tmp_path / "cfg.json")
    assert cfg.pack == str(tmp_path / "mypack") and cfg.tasks == [str(tmp_path / "extra.json")]


def test_unknown_task_ids(tmp_path):
    with pytest.raises(ConfigError):
        run(_cfg(tmp_path, task_ids=["nope-001"]))


# -- runs -------------------------------------------------------------------------


def test_oracle_run_scores_full_marks(tmp_path):
    run_dir = run(_cfg(tmp_path, run_name="oracle"))
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["counts"]["ok"] == 3 * len(manifest["tasks"])
    bundle = report(run_dir)
    assert bundle.overall.aggregates() == {"n": manifest["counts"]["ok"], "ToolSucc": 1.0, "MicroAcc": 1.0, "ResultSucc": 1.0, "JointSucc": 1.0}
    assert (run_dir / "report.json").is_file() and (run_dir / "report.txt").is_file()
    assert "Avg." in bundle.table()


def test_run_is_deterministic(tmp_path):
    first = run(_cfg(tmp_path, run_name="a", seed=3))
    second = run(_cfg(tmp_path, run_name="b", seed=3))
    assert _logs(first) == _logs(second)
    assert (first / "report.json").exists() is False
    report(first), report(second)
    assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()


def test_run_name_collision_gets_suffix(tmp_path):
    a = run(_cfg(tmp_path, run_name="same", task_ids=["retail-003"], modes=["easy"]))
    b = run(_cfg(tmp_path, run_name="same", task_ids=["retail-003"], modes=["easy"]))
    assert a != b and b.name == "same-1"


def test_unreachable_http_backend_is_agent_error(tmp_path):
    profile = {"base_url": "http://127.0.0.1:9", "model": "ghost", "max_retries": 0, "timeout_s": 0.5}
    cfg = _cfg(tmp_path, task_ids=["retail-003"], modes=["easy"], backends={"agent": {"type": "http", "profile": profile, "model": "ghost"}})
    run_dir = run(cfg)
    doc = json.loads((run_dir / "easy" / "retail-003.json").read_text())
    assert doc["status"] == "ok" and doc["halted_reason"] == "AGENT_ERROR"
    bundle = report(run_dir)
    assert bundle.overall.joint_succ == 0 and bundle.overall.histogram["STRUCTURAL"] == 1


def test_mixed_agents_average(tmp_path):
    oracle = run(_cfg(tmp_path, run_name="o", model="m", task_ids=RETAIL[:3], modes=["easy"]))
    noop = run(_cfg(tmp_path, run_name="n", model="m", task_ids=RETAIL[3:], modes=["easy"], backends={"agent": {"type": "noop"}}))
    for path in (noop / "easy").glob("*.json"):
        shutil.copy(path, oracle / "easy" / path.name)
    bundle = report(oracle)
    assert bundle.overall.n == 6 and bundle.overall.joint_succ == 0.5


def test_corrupt_and_failed_logs_are_skipped(tmp_path):
    run_dir = run(_cfg(tmp_path, task_ids=RETAIL[:2], modes=["easy"]))
    (run_dir / "easy" / "garbage.json").write_text("{not json")
    (run_dir / "easy" / "other.json").write_text(json.dumps({"hello": 1}))
    (run_dir / "easy" / "crashed.json").write_text(json.dumps({"task_id": "x", "status": "failed"}))
    bundle = report(run_dir)
    assert bundle.overall.n == 2
    assert sorted(bundle.corrupt) == ["easy/garbage.json", "easy/other.json"]
    assert bundle.skipped["failed"] == 1


def test_empty_run_dir(tmp_path):
    with pytest.raises(EmptyDataset):
        report(tmp_path, write=False)
    with pytest.raises(ConfigError):
        report(tmp_path / "missing")


def test_invalid_ground_truth_isolated(tmp_path, desk_pack):
    good = next(t for t in desk_pack.tasks if t.task_id == "retail-003").to_dict()
    task = json.loads(json.dumps(good))
    task["task_id"] = "broken-001"
    task["ground_truth"]["tool_calls"].append({"tool_name": "delete_product", "parameters": {"product_name": "ghost wine"}})
    (tmp_path / "extra.json").write_text(json.dumps([task, good]))
    # explicit task files replace the pack's own task list
    run_dir = run(_cfg(tmp_path, tasks=[str(tmp_path / "extra.json")], modes=["easy"]))
    doc = json.loads((run_dir / "easy" / "broken-001.json").read_text())
    assert doc["status"] == "invalid_ground_truth"
    assert report(run_dir).overall.n == 1


# -- cli --------------------------------------------------------------------------


def test_cli_run_and_report(tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["run", "--mode", "easy,static", "--output", str(out), "--run-name", "cli", "--parallel", "1"]) == 0
    printed = capsys.readouterr().out
    assert str(out / "cli") in printed and "100.00" in printed
    assert main(["report", str(out / "cli"), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["overall"]["JointSucc"] == 1.0 and {r["mode"] for r in doc["by_mode"]} == {"easy", "static"}


def test_cli_validate_and_replay(tmp_path, capsys):
    assert main(["validate-scenario", "builtin:desk"]) == 0
    assert "task(s) OK" in capsys.readouterr().out
    pack = load_pack("builtin:desk")
    db_path = pack.root / "retail" / "database.json"
    assert main(["validate-scenario", str(db_path), "--scenario-id", "retail"]) == 0
    assert "digest" in capsys.readouterr().out
    assert main(["replay-gt", str(pack.root / "retail" / "tasks.json")]) == 0
    assert "retail-002" in capsys.readouterr().out


def test_cli_errors_exit_2(tmp_path, capsys):
    assert main(["report", str(tmp_path / "missing")]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run", "--mode", "medium"])
