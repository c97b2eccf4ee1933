"""The ten acceptance criteria, each reported as one PASS/FAIL line."""

from __future__ import annotations

import contextlib
import copy
import json
import random
import socket
import time
from functools import lru_cache

import pytest

from conftest import call
from egoharness.agent import FunctionBackend, ScriptedBackend
from egoharness.errors import ProtocolError
from egoharness.harness import RunConfig, report, run
from egoharness.metrics import MetricsReport, TaskOutcome, calls_equal, compute_metrics, match_tool_calls
from egoharness.orchestrator import EpisodeConfig, Trajectory, Turn, TurnRole, run_episode
from egoharness.prompts import default_prompts
from egoharness.store import StateDigest, parse_database, snapshot
from egoharness.tasks import GroundTruth
from egoharness.tools import ToolStatus, execute
from egoharness.usersim import AlwaysPassEvaluator, InteractionMode, UserBackends, UserSimulator
from helpers import cascade_fixtures, outcome

RESULTS: dict[int, tuple[str, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    try:
        yield
    except BaseException:
        RESULTS[number] = ("FAIL", title)
        print(f"criterion {number:>2} FAIL  {title}")
        raise
    RESULTS[number] = ("PASS", title)
    print(f"criterion {number:>2} PASS  {title}")


def _best_of(fn, repeats=50) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


# -- 1-3: arithmetic regressions --------------------------------------------------


def test_c01_tax_regression(retail_db, retail_registry):
    with criterion(1, "tax regression on the logged five-item cart"):
        products = [
            {"product_name": "bourgogne pinot noir", "quantity": 2},
            {"product_name": "cava gran reserva", "quantity": 1},
            {"product_name": "brisa prosecco", "quantity": 2},
            {"product_name": "chateau zind-humbrecht", "quantity": 2},
            {"product_name": "chateau languedoc", "quantity": 1},
        ]
        tax = call("compute_total_tax", user_id="bill_donk_143", products=products)
        res, _ = execute(retail_db, tax, retail_registry)
        assert [d["tax_amount"] for d in res.payload["details"]] == pytest.approx([14.45, 9.82, 15.26, 65.29, 8.00], abs=0.01)
        assert res.payload["total_tax"] == pytest.approx(112.82, abs=0.01)
        assert _best_of(lambda: execute(retail_db, tax, retail_registry)) < 1e-3


def test_c02_payment_regression(retail_db, retail_registry):
    with criterion(2, "payment regression with a partial_success message"):
        products = [{"product_name": "mouton cadet", "quantity": 1}, {"product_name": "riunite", "quantity": 1}]
        res, _ = execute(retail_db, call("compute_total_payment", user_id="bill_donk_143", products=products), retail_registry)
        rec = retail_db.catalogs["products"]["mouton cadet"]
        assert (rec.price, rec.discount) == (90, 0.8)
        assert res.payload["total"] == 72.00
        assert res.status is ToolStatus.PARTIAL and res.payload["status"] == "partial_success"
        assert res.payload["message"] == "Calculated successfully. However, 1 product(s) not found in catalog: riunite"


def test_c03_nutrition_regression(retail_db, retail_registry):
    with criterion(3, "nutrition regression, x1 equals the record and x2 doubles it"):
        def total(qty):
            products = [{"product_name": "riunite moscato", "quantity": qty}]
            return execute(retail_db, call("compute_total_nutrition", user_id="u", products=products), retail_registry)[0].payload["total_nutrition"]

        one, two = total(1), total(2)
        facts = retail_db.catalogs["products"]["riunite moscato"].nutrition
        assert one["basis"] == "TOTAL"
        assert (one["calories_kcal"], one["sugar_g"], one["sodium_mg"], one["serving_size_g"]) == (120, 10, 5, 100)
        for key in ("serving_size_g", "calories_kcal", "protein_g", "fat_g", "carbs_g", "sugar_g", "sodium_mg", "fiber_g"):
            assert one[key] == getattr(facts, key)
            assert two[key] == 2 * one[key]


# -- 4: oracle end to end ---------------------------------------------------------


def test_c04_oracle_end_to_end(desk_pack, tmp_path, monkeypatch):
    with criterion(4, "oracle agent scores 1.0 on all metrics in all three modes"):
        records = sum(len(c) for sc in desk_pack.scenarios.values() for c in sc.database.catalogs.values())
        assert records >= 10 and len(desk_pack.tasks) >= 5

        def no_network(*args, **kwargs):
            raise OSError("network disabled during the oracle run")

        monkeypatch.setattr(socket.socket, "connect", no_network)
        start = time.perf_counter()
        run_dir = run(RunConfig.from_dict({"output_dir": str(tmp_path), "run_name": "oracle"}))
        bundle = report(run_dir)
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0
        assert {mode for _, mode in bundle.by_mode} == {"easy", "hard", "static"}
        for r in [bundle.overall, *bundle.by_mode.values()]:
            assert (r.tool_succ, r.micro_acc, r.result_succ, r.joint_succ) == (1.0, 1.0, 1.0, 1.0)
        assert bundle.overall.n == 3 * len(desk_pack.tasks)


# -- 5: error cascade -------------------------------------------------------------


def test_c05_error_cascade(desk_pack):
    with criterion(5, "seven crafted trajectories land in their cascade class"):
        task = next(t for t in desk_pack.tasks if t.task_id == "kitchen-001")
        fixtures = cascade_fixtures(desk_pack)
        got = {name: outcome(desk_pack, task, traj).label.value for name, (_, traj) in fixtures.items()}
        assert got == {name: label for name, (label, _) in fixtures.items()}
        assert len(fixtures) == 7


# -- 6: metric oracle equivalence -------------------------------------------------

CALL_POOL = [
    call("get_price", product_name="riunite moscato"),
    call("get_price", product_name="Riunite  Moscato"),
    call("get_price", product_name="mouton cadet"),
    call("get_cart", user_id="u_1"),
    call("get_cart", user_id="u_1", verbose=True),
    call("add_to_cart", user_id="u_1", product_name="mouton cadet", qty=1),
    call("add_to_cart", user_id="u_1", product_name="mouton cadet", qty=1.0000000001),
    call("add_to_cart", user_id="u_1", product_name="mouton cadet", qty=2),
    call("compute_total_tax", user_id="u_1", products=[{"product_name": "a", "quantity": 1}]),
]


def brute_force_m(gt, agent) -> int:
    """Exhaustive maximum injective matching by DP over used-agent subsets."""

    @lru_cache(maxsize=None)
    def best(i: int, used: int) -> int:
        if i == len(gt):
            return 0
        out = best(i + 1, used)
        for j, a in enumerate(agent):
            if not used >> j & 1 and calls_equal(gt[i], a):
                out = max(out, 1 + best(i + 1, used | 1 << j))
        return out

    return best(0, 0)


def _traj(calls, digest):
    turns = [Turn(TurnRole.USER, 0, "hi"), Turn(TurnRole.TOOL_BATCH, 0, {"calls": calls, "results": []}), Turn(TurnRole.AGENT, 0, "ok")]
    return Trajectory("t", "retail", InteractionMode.DYNAMIC_EASY, turns=turns, tool_calls_flat=list(calls), final_digest=StateDigest(digest))


def test_c06_metric_oracle_equivalence():
    with criterion(6, "matching equals brute force; metrics equal a naive recomputation"):
        rng = random.Random(6)
        for _ in range(2000):
            gt = [rng.choice(CALL_POOL) for _ in range(rng.randint(0, 8))]
            agent = [rng.choice(CALL_POOL) for _ in range(rng.randint(0, 8))]
            assert match_tool_calls(gt, agent).M == brute_force_m(tuple(gt), tuple(agent))
        for _ in range(1000):
            rows, naive = [], []
            for _ in range(rng.randint(1, 6)):
                gt = [rng.choice(CALL_POOL) for _ in range(rng.randint(0, 5))]
                agent = [rng.choice(CALL_POOL) for _ in range(rng.randint(0, 6))]
                final, expected = rng.choice("ab"), rng.choice("ab")
                rows.append((GroundTruth("t", "u_1", gt), _traj(agent, final), StateDigest(expected)))
                naive.append((len(gt), brute_force_m(tuple(gt), tuple(agent)), final == expected))
            got = compute_metrics(rows)
            n = len(naive)
            total_g = sum(g for g, _, _ in naive)
            assert got.tool_succ == sum(m == g for g, m, _ in naive) / n
            assert got.micro_acc == (sum(m for _, m, _ in naive) / total_g if total_g else 1.0)
            assert got.result_succ == sum(r for _, _, r in naive) / n
            assert got.joint_succ == sum(m == g and r for g, m, r in naive) / n


# -- 7: budgets -------------------------------------------------------------------


def _adversary(rng: random.Random) -> FunctionBackend:
    one = {"tool_name": "get_cart", "parameters": {"user_id": "tom_wu_318"}}
    write = {"tool_name": "add_to_cart", "parameters": {"user_id": "u_1", "product_name": "mouton cadet", "qty": 1, "category": "wine", "price": 90, "tax_rate": 0.06, "discount": 0.8}}

    def reply(messages, tools):
        kind = rng.random()
        if kind < 0.55:
            return json.dumps([rng.choice([one, write]) for _ in range(rng.randint(1, 60))])
        if kind < 0.65:
            return "```json\n" + json.dumps([one] * rng.randint(1, 9)) + "\n```"
        if kind < 0.72:
            return '[{"tool_name": "get_cart"}]'
        if kind < 0.78:
            return "Sure! " + json.dumps([one])
        if kind < 0.80:
            raise ProtocolError("flaky backend")
        return "What else can I do?"

    return FunctionBackend(reply)


def _pushy_user(rng: random.Random) -> FunctionBackend:
    return FunctionBackend(lambda m, t: "STOP" if rng.random() < 0.03 else "Do more, my id is tom_wu_318.")


def _check_log(log: dict, cfg: EpisodeConfig) -> None:
    executed = sum(len(b["calls"]) for b in log["tool_calls"])
    user_turns = sum(1 for d in log["dialogue"] if d["role"] == "user")
    assert executed == log["tool_calls_count"] <= cfg.max_tool_calls <= 200
    assert user_turns == log["user_turns"] <= cfg.user_turn_limit <= 10


def test_c07_budget_enforcement(desk_pack):
    with criterion(7, "10,000 adversarial episodes never exceed the tool or turn caps"):
        rng = random.Random(7)
        task = next(t for t in desk_pack.tasks if t.task_id == "retail-004")
        sc = desk_pack.scenario("retail")
        prompts = default_prompts()
        episodes = 0
        for i in range(10_200):
            if i < 10_000:
                cfg = EpisodeConfig(
                    mode=rng.choice(list(InteractionMode)),
                    max_user_turns=rng.randint(1, 4),
                    max_tool_calls=rng.randint(1, 8),
                    max_inner_iterations=rng.randint(1, 6),
                )
            else:
                cfg = EpisodeConfig(mode=rng.choice(list(InteractionMode)))
            user = UserSimulator(task, cfg.mode, UserBackends(_pushy_user(rng), AlwaysPassEvaluator()), prompts)
            traj = run_episode(task, _adversary(rng), user, sc.database.copy(), cfg, sc.registry, prompts=prompts)
            _check_log(traj.to_log(), cfg)
            episodes += 1
        assert episodes == 10_200


# -- 8: determinism ---------------------------------------------------------------


def test_c08_determinism(tmp_path):
    with criterion(8, "identical config and seed give byte-identical logs and reports"):
        outputs = []
        for name in ("first", "second"):
            cfg = RunConfig.from_dict({"output_dir": str(tmp_path), "run_name": name, "seed": 11, "parallel": 4})
            run_dir = run(cfg)
            report(run_dir)
            files = {str(p.relative_to(run_dir)): p.read_bytes() for p in sorted(run_dir.glob("*/*.json"))}
            files["report.json"] = (run_dir / "report.json").read_bytes()
            files["report.txt"] = (run_dir / "report.txt").read_bytes()
            outputs.append(files)
        assert len(outputs[0]) > 3 and outputs[0] == outputs[1]


# -- 9: digest canonicalization ---------------------------------------------------

TASTES = ["sweet", "dry", "bitter", "fruity", "smoky"]


def _random_document(rng: random.Random) -> dict:
    names = rng.sample([f"wine {i}" for i in range(100)], 25)
    products = []
    for name in names:
        products.append(
            {
                "name": name,
                "category": rng.choice(["wine", "beer", "spirit"]),
                "price": rng.randint(5, 500),
                "tax_rate": rng.choice([0.06, 0.09, 0.1, 0.12]),
                "discount": rng.choice([0.7, 0.8, 0.9, 1.0]),
                "taste": rng.sample(TASTES, rng.randint(1, 3)),
                "country_of_origin": rng.choice(["France", "Italy", "Spain"]),
                "nutrition": {"basis": "PER_100G", "serving_size_g": 100, "calories_kcal": rng.randint(40, 150), "sugar_g": rng.randint(0, 12)},
            }
        )
    carts = [
        {"user_id": f"user_{u}", "items": [{"product_name": n, "quantity": rng.randint(1, 4)} for n in rng.sample(names, rng.randint(1, 5))]}
        for u in range(6)
    ]
    lists = [{"user_id": f"user_{u}", "items": [{"product_name": n, "quantity": 1} for n in rng.sample(names, 3)]} for u in range(3)]
    return {"products": products, "user_carts": carts, "user_shopping_lists": lists}


def _permute(value, rng: random.Random):
    if isinstance(value, dict):
        keys = list(value)
        rng.shuffle(keys)
        return {k: _permute(value[k], rng) for k in keys}
    if isinstance(value, list):
        items = [_permute(v, rng) for v in value]
        rng.shuffle(items)
        return items
    return value


def _flip(doc: dict, rng: random.Random) -> dict:
    doc = copy.deepcopy(doc)
    target = rng.choice(["product", "product", "item", "nutrition"])
    if target == "item":
        item = rng.choice(rng.choice(doc["user_carts"])["items"])
        item["quantity"] += rng.choice([1, 2])
        return doc
    rec = rng.choice(doc["products"])
    if target == "nutrition":
        rec["nutrition"][rng.choice(["calories_kcal", "sugar_g"])] += 1
        return doc
    field = rng.choice(["category", "price", "tax_rate", "discount", "taste", "country_of_origin"])
    if field == "price":
        rec["price"] += rng.choice([1, 0.5])
    elif field == "tax_rate":
        rec["tax_rate"] = round(rec["tax_rate"] + 0.01, 4)
    elif field == "discount":
        rec["discount"] = 0.5 if rec["discount"] != 0.5 else 0.6
    elif field == "taste":
        rec["taste"] = [t for t in TASTES if t not in rec["taste"]][:1] + rec["taste"]
    else:
        rec[field] = rec[field] + "x"
    return doc


def test_c09_digest_canonicalization():
    with criterion(9, "1,000 permutations share one digest and every single-field flip changes it"):
        rng = random.Random(9)
        doc = _random_document(rng)
        base = snapshot(parse_database(doc, "retail")).digest
        digests = {snapshot(parse_database(_permute(doc, rng), "retail")).digest for _ in range(1000)}
        assert digests == {base}
        for _ in range(1000):
            assert snapshot(parse_database(_flip(doc, rng), "retail")).digest != base


# -- 10: simulated-user contract --------------------------------------------------

PASS = json.dumps({"scores": {"role_consistency": 1, "instruction_following": 1, "resilience": 1, "contextual_robustness": 1}, "suggestion": ""})
FAIL = json.dumps({"scores": {"role_consistency": 0, "instruction_following": 1, "resilience": 1, "contextual_robustness": 1}, "suggestion": "Stay in role."})


class Counting:
    def __init__(self, inner):
        self.inner, self.calls, self.supports_media = inner, 0, True

    def complete(self, messages, tools=None):
        self.calls += 1
        return self.inner.complete(messages, tools)


def test_c10_user_pipeline_contract(desk_pack):
    with criterion(10, "per-turn actor/evaluator call bounds and the static ending sentence"):
        rng = random.Random(10)
        ending = default_prompts().ending_sentence
        assert ending == "I have stated all my requirements. Please do not ask me anything further. Complete all of these requirements before speaking to me again."
        for episode in range(300):
            task = rng.choice(desk_pack.tasks)
            sc = desk_pack.scenario(task.scenario_id)
            mode = rng.choice(list(InteractionMode))
            actor = Counting(FunctionBackend(lambda m, t: rng.choice(["Please add it.", "I will help you.", "STOP"])))
            evaluator = Counting(ScriptedBackend([rng.choice([PASS, FAIL, FAIL, "not json"]) for _ in range(200)]))
            user = UserSimulator(task, mode, UserBackends(actor, evaluator), default_prompts())
            turns, before = [], (0, 0)

            original = user.next_message

            def counted(reply, original=original, actor=actor, evaluator=evaluator):
                nonlocal before
                try:
                    return original(reply)
                finally:
                    turns.append((actor.calls - before[0], evaluator.calls - before[1]))
                    before = (actor.calls, evaluator.calls)

            user.next_message = counted
            agent = FunctionBackend(lambda m, t: "Done.")
            try:
                traj = run_episode(task, agent, user, sc.database.copy(), EpisodeConfig(mode=mode), sc.registry)
            except Exception as exc:  # pragma: no cover - surfaced below
                raise AssertionError(f"episode {episode} crashed: {exc}") from exc
            assert turns and all(a <= 2 and e <= 2 for a, e in turns)
            if mode is InteractionMode.STATIC:
                messages = [t.content for t in traj.turns if t.role is TurnRole.USER]
                if traj.error is None:
                    assert len(messages) == 1 and messages[0].endswith(ending)
        # and one clean static episode through the scripted task actor
        task = next(t for t in desk_pack.tasks if t.task_id == "retail-001")
        sc = desk_pack.scenario("retail")
        user = UserSimulator(task, "static", UserBackends(ScriptedBackend([task.static_message]), AlwaysPassEvaluator()))
        traj = run_episode(task, FunctionBackend(lambda m, t: "Done."), user, sc.database.copy(), EpisodeConfig(mode="static"), sc.registry)
        messages = [t.content for t in traj.turns if t.role is TurnRole.USER]
        assert len(messages) == 1 and messages[0].endswith(ending)
