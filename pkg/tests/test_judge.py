from dataclasses import replace

import pytest

from services.acctree import AccessibilityTree, AccNode
from services.actions import ScrollDown, Stop, format_action
from services.judge_service import GoalPredicate, InvalidGoal, RuleBasedJudge, evaluate
from services.task_service import candidate_actions
from services.trajectory import Trajectory, TrajectoryStep
from services.web_env import generate_site, initial_state, observe, step


@pytest.fixture
def page():
    return AccessibilityTree(
        AccNode(
            1,
            "root",
            "Oak Desk",
            False,
            (AccNode(2, "heading", "Oak Desk"), AccNode(3, "text", "Price: $42"), AccNode(4, "textbox", "oak desk")),
        ),
        "http://shop-1.local/page/3-oak-desk",
    )


def _trajectory(obs, *actions, truncated=False):
    steps = tuple(TrajectoryStep(obs, action) for action in actions)
    return Trajectory("t-1", "What is the price of the Oak Desk?", ("", "$42"), steps, truncated=truncated)


class TestEvaluate:
    def test_correct_answer_on_target_page(self, page):
        goal = GoalPredicate(answer_pattern="$42", terminal_page="/page/3-oak-desk")
        assert evaluate(goal, _trajectory(page, Stop(" $42 "))) == 1

    def test_wrong_answer(self, page):
        goal = GoalPredicate(answer_pattern="$42")
        assert evaluate(goal, _trajectory(page, Stop("$41"))) == 0

    def test_wrong_page(self, page):
        goal = GoalPredicate(terminal_page="/page/7")
        assert evaluate(goal, _trajectory(page, Stop(""))) == 0

    def test_truncated_trajectories_score_zero(self, page):
        goal = GoalPredicate(answer_pattern="$42")
        assert evaluate(goal, _trajectory(page, Stop("$42"), truncated=True)) == 0

    def test_must_end_with_stop(self, page):
        goal = GoalPredicate(terminal_page="/page/3")
        assert evaluate(goal, _trajectory(page, ScrollDown())) == 0
        assert evaluate(goal, _trajectory(page)) == 0

    def test_contains_mode_ignores_case(self, page):
        goal = GoalPredicate(answer_pattern="oak", answer_mode="contains")
        assert evaluate(goal, _trajectory(page, Stop("The OAK desk"))) == 1

    def test_form_condition(self, page):
        assert evaluate(GoalPredicate(form_condition=((4, "oak desk"),)), _trajectory(page, Stop(""))) == 1
        assert evaluate(GoalPredicate(form_condition=((4, "Oak Desk"),)), _trajectory(page, Stop(""))) == 0
        assert evaluate(GoalPredicate(form_condition=((3, "Price: $42"),)), _trajectory(page, Stop(""))) == 0

    def test_judge_delegates(self, page):
        goal = GoalPredicate(answer_pattern="$42")
        assert RuleBasedJudge().score(goal, _trajectory(page, Stop("$42"))) == 1


class TestGoalPredicate:
    def test_needs_a_condition(self):
        with pytest.raises(InvalidGoal):
            GoalPredicate()

    def test_rejects_unknown_mode(self):
        with pytest.raises(InvalidGoal):
            GoalPredicate(answer_pattern="x", answer_mode="regex")

    def test_json_round_trip(self):
        goal = GoalPredicate(terminal_page="/home", form_condition=((5, "Oak Desk"),))
        assert GoalPredicate.from_json(goal.to_json()) == goal


# ---------------------------------------------------------------------------
# Exhaustive small site
# ---------------------------------------------------------------------------


def _runs(site, vocab, max_moves=2):
    """Every run of up to `max_moves` candidate actions, unstopped and under each possible stop."""
    frontier = [((), initial_state(site))]
    for depth in range(max_moves + 1):
        next_frontier = []
        for steps, state in frontier:
            obs = observe(state)
            yield steps, state
            for answer in vocab:
                final, _ = step(state, Stop(answer))
                yield steps + (TrajectoryStep(obs, Stop(answer)),), final
            if depth < max_moves:
                for action in candidate_actions(obs, vocab):
                    advanced, _ = step(state, action)
                    next_frontier.append((steps + (TrajectoryStep(obs, action),), advanced))
        frontier = next_frontier


def test_judge_agrees_with_the_final_state_on_every_short_run():
    site = generate_site(5, "shop", 3, 2)
    item, other = site.pages[1], site.pages[2]
    price = item.fact.split(": ", 1)[1]
    vocab = ("", price, item.title, other.title)
    box = site.search_box_id
    cases = {
        "price": (
            GoalPredicate(answer_pattern=price, terminal_page=item.url),
            lambda final: final.page_id == 1 and final.answer == price,
        ),
        "contains": (
            GoalPredicate(answer_pattern=price[1:], answer_mode="contains"),
            lambda final: price[1:] in final.answer.lower(),
        ),
        "search": (
            GoalPredicate(terminal_page=site.home.url, form_condition=((box, other.title),)),
            lambda final: final.page_id == 0 and final.scroll_offset == 0 and final.form_value(box) == other.title,
        ),
        "navigate": (GoalPredicate(terminal_page=other.url), lambda final: final.page_id == 2),
    }
    successes = dict.fromkeys(cases, 0)

    for steps, final in _runs(site, vocab):
        trajectory = Trajectory("t-1", "query", vocab, steps)
        for name, (goal, holds) in cases.items():
            expected = int(final.done and holds(final))
            assert evaluate(goal, trajectory) == expected, (name, [format_action(s.action) for s in steps])
            assert evaluate(goal, replace(trajectory, truncated=True)) == 0
            successes[name] += expected

    assert all(count > 0 for count in successes.values())
