from dataclasses import dataclass, replace

import pytest

from constants import SCROLL_STEP, VIEWPORT_SIZE
from services.actions import Click, GoBack, ScrollDown, ScrollUp, Stop, Type, format_action
from services.web_env import (
    EpisodeDone,
    InvalidSize,
    UnknownElement,
    WebEnvironment,
    generate_site,
    initial_state,
    observe,
    step,
    validate_action,
)
from utils.text_utils import slugify


@pytest.fixture
def site():
    return generate_site(11, "shop", 10, 3)


def _search(state, title, press_enter=True):
    return step(state, Type(state.site.search_box_id, title, press_enter))


class TestGenerateSite:
    def test_shape(self, site):
        assert len(site.pages) == 10
        assert site.home.url == "http://shop-11.local/home"
        assert site.link_targets(0) and set(site.link_targets(0)) == {1, 2, 3}

    def test_same_seed_same_site(self, site):
        assert generate_site.__wrapped__(11, "shop", 10, 3) == site

    def test_ids_are_unique_site_wide(self, site):
        ids = [page.root_id for page in site.pages] + [page.heading_id for page in site.pages]
        ids += [element.id for page in site.pages for element in page.elements]
        assert len(ids) == len(set(ids))

    def test_page_urls_carry_the_page_id(self, site):
        for page in site.pages[1:]:
            assert page.url == f"http://shop-11.local/page/{page.page_id}-{slugify(page.title)}"

    def test_urls_stay_distinct_when_titles_repeat(self):
        big = generate_site(3, "wiki", 80, 4)
        urls = [page.url for page in big.pages]
        assert len(set(urls)) == len(urls)
        assert not any(a != b and a in b for a in urls for b in urls)

    def test_non_home_pages_carry_a_fact(self, site):
        assert all(page.fact.startswith("Price: $") for page in site.pages[1:])

    @pytest.mark.parametrize(
        ("kind", "n_pages", "branching"),
        [("shop", 1, 3), ("shop", 10, 0), ("blog", 10, 3)],
    )
    def test_rejects_bad_sizes(self, kind, n_pages, branching):
        with pytest.raises(InvalidSize):
            generate_site(0, kind, n_pages, branching)


class TestObserve:
    def test_home_observation(self, site):
        obs = observe(initial_state(site))
        assert obs.url == site.home.url
        assert obs.root.role == "root"
        assert obs.root.children[0].role == "heading"
        assert len(obs.root.children) <= VIEWPORT_SIZE + 1

    def test_textbox_shows_typed_value(self, site):
        state, obs = _search(initial_state(site), "kettle", press_enter=False)
        box = obs.find(site.search_box_id)
        assert box.name == "kettle"
        assert box.focused
        assert state.page_id == 0


class TestStep:
    def test_search_navigates_to_matching_page(self, site):
        title = site.pages[1].title
        state, obs = _search(initial_state(site), title.upper())
        assert state.page_id == 1
        assert obs.url == site.pages[1].url
        assert state.steps == 1

    def test_search_button_submits(self, site):
        state, _ = _search(initial_state(site), site.pages[2].title, press_enter=False)
        button = next(element for element in site.home.elements if element.submits_search)
        state, _ = step(state, Click(button.id))
        assert state.page_id == 2

    def test_unknown_title_stays_home(self, site):
        state, _ = _search(initial_state(site), "no such page")
        assert state.page_id == 0

    def test_go_back_restores_previous_page(self, site):
        state, _ = _search(initial_state(site), site.pages[1].title)
        state, obs = step(state, GoBack())
        assert state.page_id == 0
        assert obs.url == site.home.url
        assert state.history == ()

    def test_go_back_on_empty_history_is_a_no_op(self, site):
        state, _ = step(initial_state(site), GoBack())
        assert state.page_id == 0
        assert state.steps == 1

    def test_home_link(self, site):
        state, _ = _search(initial_state(site), site.pages[1].title)
        home_link = site.pages[1].elements[0]
        assert home_link.name == "Home"
        state, _ = step(state, Click(home_link.id))
        assert state.page_id == 0

    def test_scrolling_is_bounded(self, site):
        start = initial_state(site)
        state, _ = step(start, ScrollDown())
        assert state.scroll_offset == min(SCROLL_STEP, site.home.max_offset)
        state, _ = step(state, ScrollUp())
        state, _ = step(state, ScrollUp())
        assert state.scroll_offset == 0

    def test_invalid_target_only_counts(self, site):
        start = initial_state(site)
        state, obs = step(start, Click(999_999))
        assert state.invalid_actions == 1
        assert state.steps == 1
        assert replace(state, steps=0, invalid_actions=0) == start
        assert obs == observe(start)

    def test_typing_into_a_heading_is_invalid(self, site):
        state, _ = step(initial_state(site), Type(site.home.heading_id, "x"))
        assert state.invalid_actions == 1

    def test_stop_ends_the_episode(self, site):
        state, _ = step(initial_state(site), Stop("$12"))
        assert state.done
        assert state.answer == "$12"
        with pytest.raises(EpisodeDone):
            step(state, ScrollDown())

    def test_validate_action_raises_for_hidden_elements(self, site):
        with pytest.raises(UnknownElement):
            validate_action(initial_state(site), Click(999_999))


def test_environment_counts_interactions(tasks):
    env = WebEnvironment()
    state, _ = env.reset(tasks[0])
    env.step(state, ScrollDown())
    assert env.reset_count == 1
    assert env.step_count == 1


@pytest.mark.parametrize(
    ("action", "text"),
    [
        (Click(7), "click [7]"),
        (Type(5, "laptop", True), "type [5] [laptop] [1]"),
        (ScrollUp(), "scroll [up]"),
        (ScrollDown(), "scroll [down]"),
        (GoBack(), "goback"),
        (Stop("5h 47min"), "stop [5h 47min]"),
    ],
)
def test_format_action(action, text):
    assert format_action(action) == text


# ---------------------------------------------------------------------------
# Exhaustive small site
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Expected:
    page: int = 0
    offset: int = 0
    focus: int | None = None
    box: str = ""
    stack: tuple = ()
    done: bool = False
    invalid: int = 0


def _link_table(site):
    # Three pages, branching two: home links both children, each child links home.
    return {
        0: {site.pages[1].title: 1, site.pages[2].title: 2},
        1: {"Home": 0},
        2: {"Home": 0},
    }


def _all_actions(site):
    ids = [999_999] + [node for page in site.pages for node in (page.root_id, page.heading_id)]
    ids += [element.id for page in site.pages for element in page.elements]
    contents = ("", "zzz") + tuple(page.title for page in site.pages)
    actions = [Click(node) for node in ids] + [ScrollDown(), ScrollUp(), GoBack(), Stop("x")]
    for target in (site.search_box_id, site.home.heading_id):
        actions += [Type(target, content, enter) for content in contents for enter in (False, True)]
    return actions


def _observed(site, state):
    return _Expected(
        page=state.page_id,
        offset=state.scroll_offset,
        focus=state.focus_id,
        box=state.form_value(site.search_box_id),
        stack=state.history,
        done=state.done,
        invalid=state.invalid_actions,
    )


def _expected_navigation(expected, page_id):
    entry = (expected.page, expected.offset, expected.focus)
    return replace(expected, page=page_id, offset=0, focus=None, stack=expected.stack + (entry,))


def _expected_search(site, expected):
    matches = [page.page_id for page in site.pages if expected.box and page.title == expected.box]
    if not matches or matches[0] == expected.page:
        return expected
    return _expected_navigation(expected, matches[0])


def _expect(site, links, expected, action):
    page = site.pages[expected.page]
    visible = {element.id: element for element in page.elements[expected.offset : expected.offset + VIEWPORT_SIZE]}
    element = visible.get(getattr(action, "target_id", None))
    if isinstance(action, Click) and element is None and action.target_id not in (page.root_id, page.heading_id):
        return replace(expected, invalid=expected.invalid + 1)
    if isinstance(action, Type) and (element is None or element.role != "textbox"):
        return replace(expected, invalid=expected.invalid + 1)

    if isinstance(action, Stop):
        return replace(expected, done=True)
    if isinstance(action, GoBack):
        if not expected.stack:
            return expected
        page_id, offset, focus = expected.stack[-1]
        return replace(expected, page=page_id, offset=offset, focus=focus, stack=expected.stack[:-1])
    if isinstance(action, ScrollDown):
        return replace(expected, offset=min(expected.offset + SCROLL_STEP, max(0, len(page.elements) - VIEWPORT_SIZE)))
    if isinstance(action, ScrollUp):
        return replace(expected, offset=max(expected.offset - SCROLL_STEP, 0))
    if isinstance(action, Type):
        typed = replace(expected, box=action.content, focus=action.target_id)
        return _expected_search(site, typed) if action.press_enter else typed
    if element is None:
        return expected
    if element.role == "link":
        return _expected_navigation(expected, links[expected.page][element.name])
    if element.role == "button":
        return _expected_search(site, expected)
    if element.role == "textbox":
        return replace(expected, focus=element.id)
    return expected


def test_every_transition_on_a_three_page_site_matches_the_link_table():
    site = generate_site(5, "shop", 3, 2)
    links = _link_table(site)
    actions = _all_actions(site)
    frontier = [(initial_state(site), _Expected())]
    seen = {_Expected()}
    pages_reached = set()

    for _ in range(3):
        next_frontier = []
        for state, expected in frontier:
            for action in actions:
                advanced, obs = step(state, action)
                want = _expect(site, links, expected, action)
                assert _observed(site, advanced) == want, format_action(action)
                assert obs.url == site.pages[want.page].url
                pages_reached.add(want.page)
                key = replace(want, invalid=0)
                if not want.done and key not in seen:
                    seen.add(key)
                    next_frontier.append((advanced, want))
        frontier = next_frontier

    assert pages_reached == {0, 1, 2}
