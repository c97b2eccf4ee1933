from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from egoharness.agent import ChatMessage, Completion, FunctionBackend, Role, ScriptedBackend
from egoharness.errors import MalformedEvaluation, UserBackendError
from egoharness.prompts import default_prompts
from egoharness.usersim import (
    CRITERIA,
    AlwaysPassEvaluator,
    CriteriaScores,
    HeuristicEvaluator,
    InteractionMode,
    NoiseSource,
    TaskScriptActor,
    TemplateSummarizer,
    UserBackends,
    UserSimulator,
    count_sentences,
    is_complaint,
    is_stop,
    parse_evaluation,
)

PASS = json.dumps({"scores": {c: 1 for c in CRITERIA}, "suggestion": ""})
FAIL = json.dumps({"scores": {**{c: 1 for c in CRITERIA}, "role_consistency": 0}, "suggestion": "Speak as the customer."})


@pytest.fixture
def task(desk_pack):
    return next(t for t in desk_pack.tasks if t.task_id == "retail-001")


def _sim(task, mode, actor, evaluator, summarizer=None, noise=None):
    return UserSimulator(task, mode, UserBackends(actor, evaluator, summarizer), noise=noise)


# -- parsing and small predicates ----------------------------------------------


def test_mode_parse_aliases():
    assert InteractionMode.parse("dynamic_hard") is InteractionMode.DYNAMIC_HARD
    assert InteractionMode.parse(" Static ") is InteractionMode.STATIC
    with pytest.raises(ValueError):
        InteractionMode.parse("medium")


@pytest.mark.parametrize(
    "text, expected",
    [("STOP", True), ("  STOP\n", True), ("ok. STOP", True), ("stop", False), ("STOPPED early", False)],
)
def test_is_stop(text, expected):
    assert is_stop(text) is expected


def test_is_complaint_and_sentences():
    assert is_complaint("Bad Service Agent. You ignored me.")
    assert not is_complaint("The agent was bad.")
    assert count_sentences("One. Two! Three?") == 3
    assert count_sentences("") == 0


def test_parse_evaluation_strict():
    assert parse_evaluation(PASS).all_pass
    fenced = parse_evaluation(f"```json\n{FAIL}\n```")
    assert fenced.role_consistency == 0 and fenced.average == 0.75
    stray = json.dumps({"scores": {c: 1 for c in CRITERIA}, "suggestion": "extra"})
    assert parse_evaluation(stray).suggestion == ""
    for bad in ["not json", "{}", json.dumps({"scores": {c: 2 for c in CRITERIA}}), json.dumps({"scores": {c: True for c in CRITERIA}})]:
        with pytest.raises(MalformedEvaluation):
            parse_evaluation(bad)


def test_failing_scores_require_suggestion():
    with pytest.raises(MalformedEvaluation):
        CriteriaScores(0, 1, 1, 1, "")
    with pytest.raises(MalformedEvaluation):
        CriteriaScores(1, 1, 1, 1, "unnecessary")


# -- gating ---------------------------------------------------------------------


def test_passing_draft_costs_one_actor_one_evaluator_call(task):
    actor, evaluator = ScriptedBackend(["hello"]), ScriptedBackend([PASS])
    turn = _sim(task, "easy", actor, evaluator).next_message("Hi")
    assert (turn.actor_calls, turn.evaluator_calls) == (1, 1)
    assert turn.content == "hello" and not turn.evaluation["correction_applied"]


def test_failing_draft_is_regenerated_once_and_forwarded(task):
    actor = ScriptedBackend(["I will help you with that", "Add the wine please"])
    evaluator = ScriptedBackend([FAIL, FAIL])
    turn = _sim(task, "easy", actor, evaluator).next_message("Hi")
    assert (turn.actor_calls, turn.evaluator_calls) == (2, 2)
    assert turn.content == "Add the wine please"
    assert turn.evaluation["original_response"] == "I will help you with that"
    assert turn.evaluation["correction_applied"]


def test_feedback_reaches_revision_prompt(task):
    prompts = []

    def actor(messages, tools):
        prompts.append(messages[0].content)
        return "draft"

    sim = _sim(task, "easy", FunctionBackend(actor), ScriptedBackend([FAIL, PASS]))
    sim.next_message("Hi")
    assert "Speak as the customer." not in prompts[0]
    assert "Speak as the customer." in prompts[1] and "draft" in prompts[1]


def test_malformed_evaluation_requeried_once(task):
    turn = _sim(task, "easy", ScriptedBackend(["x"]), ScriptedBackend(["garbage", PASS])).next_message("Hi")
    assert turn.evaluator_calls == 2
    with pytest.raises(MalformedEvaluation):
        _sim(task, "easy", ScriptedBackend(["x"]), ScriptedBackend(["garbage", "again"])).next_message("Hi")


def test_backend_failure_wrapped(task):
    def boom(messages, tools):
        raise RuntimeError("down")

    with pytest.raises(UserBackendError):
        _sim(task, "easy", FunctionBackend(boom), AlwaysPassEvaluator()).next_message("Hi")


def test_stop_and_complaint_tracking(task):
    actor = ScriptedBackend(["Bad Service Agent. Wrong again.", "Bad Service Agent. Still wrong.", "STOP"])
    sim = _sim(task, "easy", actor, AlwaysPassEvaluator())
    first, second, third = (sim.next_message("...") for _ in range(3))
    assert first.is_complaint and second.is_complaint and sim.state.complaints == 0
    assert third.is_stop and sim.state.turn == 3


# -- modes ------------------------------------------------------------------------


def test_static_mode_appends_ending_once(task):
    ending = default_prompts().ending_sentence
    sim = _sim(task, "static", TaskScriptActor(task), AlwaysPassEvaluator())
    turn = sim.next_message("")
    assert turn.content.endswith(ending) and turn.content.count(ending) == 1
    already = _sim(task, "static", ScriptedBackend([f"Do it. {ending}"]), AlwaysPassEvaluator()).next_message("")
    assert already.content.count(ending) == 1


def test_hard_mode_noise_is_seeded(task):
    pool = ["By the way, it is raining.", "My phone is almost dead.", "I am in a hurry."]

    def run(seed):
        sim = _sim(task, "hard", ScriptedBackend(["a", "b", "c", "d"]), AlwaysPassEvaluator(), noise=NoiseSource(pool, seed))
        return [sim.next_message("").content for _ in range(4)]

    assert run(7) == run(7)
    assert all(any(msg.endswith(n) for n in pool) for msg in run(7))
    assert any(run(s) != run(7) for s in range(8, 20))


def test_easy_mode_has_no_noise(task):
    sim = _sim(task, "easy", ScriptedBackend(["plain"]), AlwaysPassEvaluator(), noise=NoiseSource(["noise"], 1))
    assert sim.next_message("").content == "plain"


def test_noise_pool_must_be_non_empty():
    with pytest.raises(ValueError):
        NoiseSource([], 0)


# -- summarizer -------------------------------------------------------------------


def test_summary_feeds_next_actor_prompt(task):
    prompts = []

    def actor(messages, tools):
        prompts.append(messages[0].content)
        return "next"

    sim = _sim(task, "easy", FunctionBackend(actor), AlwaysPassEvaluator(), TemplateSummarizer())
    turn = sim.next_message("Welcome")
    summary = sim.summarize_turn("Added riunite moscato.", turn.content)
    assert count_sentences(summary) <= 3
    sim.next_message("Added riunite moscato.")
    assert summary in prompts[1]


def test_summary_without_backend_unchanged(task):
    sim = _sim(task, "easy", AlwaysPassEvaluator(), AlwaysPassEvaluator())
    assert sim.summarize_turn("a", "b") == ""


@given(st.text(max_size=400), st.text(max_size=400), st.integers(0, 20))
def test_template_summarizer_three_sentences(agent_msg, user_msg, turn):
    meta = {"agent_msg": agent_msg, "user_msg": user_msg, "turn": turn}
    text = TemplateSummarizer().complete([ChatMessage(Role.USER, "", metadata=meta)]).text
    assert count_sentences(text) <= 3


# -- offline actors and evaluators ----------------------------------------------


def test_task_script_actor_walks_script_then_stops(task):
    sim = _sim(task, "easy", TaskScriptActor(task), AlwaysPassEvaluator())
    lines = [sim.next_message("").content for _ in range(len(task.user_script) + 1)]
    assert lines[:-1] == task.user_script and lines[-1] == "STOP"


def test_task_script_actor_repeats_line_on_revision(task):
    sim = _sim(task, "easy", TaskScriptActor(task), ScriptedBackend([FAIL, PASS, PASS]))
    assert sim.next_message("").content == task.user_script[0]
    assert sim.next_message("").content == task.user_script[1]


def _judge(user_msg, agent_msg="", uid="grace_liu_999"):
    meta = {"user_msg": user_msg, "agent_msg": agent_msg, "user_id": uid, "instruction": ""}
    return parse_evaluation(HeuristicEvaluator().complete([ChatMessage(Role.USER, "", metadata=meta)]).text)


def test_heuristic_role_consistency():
    assert _judge("I'll help you find a wine for the party.").role_consistency == 0
    assert _judge("Please add the blue-capped wine to my cart.").all_pass


def test_heuristic_instruction_following():
    assert _judge("STOP. Also tell me the tax.").instruction_following == 0
    assert _judge("STOP").all_pass


def test_heuristic_contextual_robustness():
    bad = _judge("Yes, go ahead.", agent_msg="Done for user grace_liu_998.")
    assert bad.contextual_robustness == 0 and "grace_liu_999" in bad.suggestion
    assert _judge("No, my id is grace_liu_999.", agent_msg="Done for user grace_liu_998.").all_pass


def test_completion_usage_accumulates(task):
    from egoharness.agent import UsageCounters

    def actor(messages, tools):
        return Completion("hi", UsageCounters(10, 2))

    sim = _sim(task, "easy", FunctionBackend(actor), AlwaysPassEvaluator())
    sim.next_message("")
    assert sim.usage == UsageCounters(10, 2)


def test_requery_shares_the_turn_budget(task):
    sim = _sim(task, "easy", ScriptedBackend(["a", "b"]), ScriptedBackend(["garbage", FAIL]))
    turn = sim.next_message("Hi")
    assert (turn.actor_calls, turn.evaluator_calls) == (2, 2)
    assert turn.content == "b" and turn.evaluation["scores"] is None


def test_malformed_rescore_forwards_unscored(task):
    sim = _sim(task, "easy", ScriptedBackend(["a", "b"]), ScriptedBackend([FAIL, "garbage"]))
    turn = sim.next_message("Hi")
    assert turn.evaluator_calls == 2 and turn.content == "b"
    assert turn.evaluation["scores"] is None and turn.evaluation["correction_applied"]
