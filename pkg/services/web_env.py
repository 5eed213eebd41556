"""Deterministic synthetic websites and the real environment the world model imitates."""

import logging
import threading
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import TYPE_CHECKING

from constants import (
    MAX_FILLER_ELEMENTS,
    SCROLL_STEP,
    SITE_KINDS,
    VIEWPORT_SIZE,
)
from services import site_lexicon
from services.acctree import AccessibilityTree, AccNode
from services.actions import Action, Click, GoBack, ScrollDown, ScrollUp, Stop, Type, format_action
from utils.errors import DreamdeskError
from utils.rng import make_rng
from utils.text_utils import normalize_text, slugify

if TYPE_CHECKING:
    from services.task_service import Task

logger = logging.getLogger(__name__)


class InvalidSize(DreamdeskError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason, reason=reason)


class EpisodeDone(DreamdeskError):
    def __init__(self) -> None:
        super().__init__("episode already finished; no further steps are accepted")


class UnknownElement(DreamdeskError):
    def __init__(self, element_id: int | None) -> None:
        super().__init__(f"element {element_id} is not on the current observation", id=element_id)
        self.element_id = element_id


@dataclass(frozen=True)
class Element:
    id: int
    role: str
    name: str
    target: int | None = None
    submits_search: bool = False


@dataclass(frozen=True)
class Page:
    page_id: int
    title: str
    url: str
    root_id: int
    heading_id: int
    elements: tuple[Element, ...]
    fact: str = ""

    @property
    def max_offset(self) -> int:
        return max(0, len(self.elements) - VIEWPORT_SIZE)

    def element(self, element_id: int) -> Element | None:
        for element in self.elements:
            if element.id == element_id:
                return element
        return None


@dataclass(frozen=True)
class WebSite:
    seed: int
    kind: str
    pages: tuple[Page, ...]
    branching: int

    @property
    def home(self) -> Page:
        return self.pages[0]

    def page_by_title(self, title: str) -> Page | None:
        wanted = normalize_text(title)
        if not wanted:
            return None
        for page in self.pages:
            if normalize_text(page.title) == wanted:
                return page
        return None

    def link_targets(self, page_id: int) -> list[int]:
        return [element.target for element in self.pages[page_id].elements if element.target is not None]

    @property
    def search_box_id(self) -> int | None:
        for element in self.home.elements:
            if element.role == "textbox":
                return element.id
        return None


def _children_of(page_id: int, n_pages: int, branching: int) -> list[int]:
    first = page_id * branching + 1
    return [child for child in range(first, first + branching) if child < n_pages]


def _page_titles(kind: str, count: int, rng) -> list[str]:
    pool = site_lexicon.get_page_titles(kind)
    order = [pool[index] for index in rng.permutation(len(pool))]
    titles = order[:count]
    round_no = 2
    while len(titles) < count:
        titles.extend(f"{title} {round_no}" for title in order[: count - len(titles)])
        round_no += 1
    return titles


def _page_fact(kind: str, rng) -> str:
    if kind == "shop":
        return f"Price: ${int(rng.integers(5, 500))}"
    if kind == "forum":
        authors = site_lexicon.get_authors()
        return f"Author: {authors[int(rng.integers(len(authors)))]}"
    categories = site_lexicon.get_categories()
    return f"Category: {categories[int(rng.integers(len(categories)))]}"


@lru_cache(maxsize=256)
def generate_site(seed: int, kind: str, n_pages: int, branching: int) -> WebSite:
    """Build a site whose pages form a `branching`-ary tree rooted at the home page.

    Ids are assigned sequentially site-wide, so they are stable across visits.
    """
    if n_pages < 2:
        raise InvalidSize(f"n_pages must be at least 2, got {n_pages}")
    if branching < 1:
        raise InvalidSize(f"branching must be at least 1, got {branching}")
    if kind not in SITE_KINDS:
        raise InvalidSize(f"unknown site kind {kind!r}")

    rng = make_rng(seed, f"site:{kind}:{n_pages}:{branching}")
    titles = [site_lexicon.get_home_title(kind)] + _page_titles(kind, n_pages - 1, rng)
    fillers = site_lexicon.get_filler_phrases()
    host = f"http://{kind}-{seed}.local"

    next_id = 1
    pages: list[Page] = []
    for page_id, title in enumerate(titles):
        root_id, heading_id = next_id, next_id + 1
        next_id += 2
        fixed: list[tuple[str, str, int | None, bool]] = []
        fact = ""
        if page_id == 0:
            fixed.append(("textbox", "", None, False))
            fixed.append(("button", "Search", None, True))
        else:
            fixed.append(("link", "Home", 0, False))
            fact = _page_fact(kind, rng)
            fixed.append(("text", fact, None, False))

        movable: list[tuple[str, str, int | None, bool]] = [
            ("link", titles[child], child, False) for child in _children_of(page_id, n_pages, branching)
        ]
        filler_count = int(rng.integers(0, MAX_FILLER_ELEMENTS + 1))
        movable.extend(("text", fillers[int(rng.integers(len(fillers)))], None, False) for _ in range(filler_count))
        movable = [movable[index] for index in rng.permutation(len(movable))]

        elements = []
        for role, name, target, submits in fixed + movable:
            elements.append(Element(next_id, role, name, target, submits))
            next_id += 1
        url = f"{host}/home" if page_id == 0 else f"{host}/page/{page_id}-{slugify(title)}"
        pages.append(Page(page_id, title, url, root_id, heading_id, tuple(elements), fact))

    return WebSite(seed, kind, tuple(pages), branching)


@dataclass(frozen=True)
class EnvState:
    site: WebSite
    page_id: int
    history: tuple[tuple[int, int, int | None], ...] = ()
    form_values: tuple[tuple[int, str], ...] = ()
    scroll_offset: int = 0
    focus_id: int | None = None
    done: bool = False
    answer: str | None = None
    steps: int = 0
    invalid_actions: int = 0

    @property
    def page(self) -> Page:
        return self.site.pages[self.page_id]

    def form_value(self, element_id: int) -> str:
        return dict(self.form_values).get(element_id, "")

    def with_form_value(self, element_id: int, value: str) -> "EnvState":
        values = dict(self.form_values)
        values[element_id] = value
        return replace(self, form_values=tuple(sorted(values.items())))

    def visible_elements(self) -> tuple[Element, ...]:
        return self.page.elements[self.scroll_offset : self.scroll_offset + VIEWPORT_SIZE]


def observe(state: EnvState) -> AccessibilityTree:
    page = state.page
    children = [AccNode(page.heading_id, "heading", page.title)]
    for element in state.visible_elements():
        name = state.form_value(element.id) if element.role == "textbox" else element.name
        children.append(AccNode(element.id, element.role, name, element.id == state.focus_id))
    return AccessibilityTree(AccNode(page.root_id, "root", page.title, False, tuple(children)), page.url)


def initial_state(site: WebSite, start_page: int = 0) -> EnvState:
    return EnvState(site=site, page_id=start_page)


def reset(task: "Task") -> tuple[EnvState, AccessibilityTree]:
    site = generate_site(task.site_seed, task.site_kind, task.site_pages, task.site_branching)
    state = initial_state(site, task.start_page)
    return state, observe(state)


def _navigate(state: EnvState, page_id: int) -> EnvState:
    entry = (state.page_id, state.scroll_offset, state.focus_id)
    return replace(state, page_id=page_id, history=state.history + (entry,), scroll_offset=0, focus_id=None)


def _submit_search(state: EnvState, box_id: int | None) -> EnvState:
    if box_id is None:
        return state
    match = state.site.page_by_title(state.form_value(box_id))
    if match is None or match.page_id == state.page_id:
        return state
    return _navigate(state, match.page_id)


def _visible_target(state: EnvState, element_id: int) -> Element | None:
    page = state.page
    if element_id in (page.root_id, page.heading_id):
        return Element(element_id, "heading", page.title)
    for element in state.visible_elements():
        if element.id == element_id:
            return element
    return None


def validate_action(state: EnvState, action: Action) -> Element | None:
    """Resolve the visible element an action targets; raises UnknownElement when it has none."""
    if isinstance(action, Click):
        element = _visible_target(state, action.target_id)
        if element is None:
            raise UnknownElement(action.target_id)
        return element
    if isinstance(action, Type):
        element = _visible_target(state, action.target_id)
        if element is None or element.role != "textbox":
            raise UnknownElement(action.target_id)
        return element
    return None


def _transition(state: EnvState, action: Action) -> EnvState:
    try:
        element = validate_action(state, action)
    except UnknownElement:
        logger.debug("Invalid action %s on page %s", format_action(action), state.page_id)
        return replace(state, invalid_actions=state.invalid_actions + 1)

    if isinstance(action, Stop):
        return replace(state, done=True, answer=action.answer)
    if isinstance(action, GoBack):
        if not state.history:
            return state
        page_id, offset, focus_id = state.history[-1]
        return replace(state, page_id=page_id, scroll_offset=offset, focus_id=focus_id, history=state.history[:-1])
    if isinstance(action, ScrollDown):
        return replace(state, scroll_offset=min(state.scroll_offset + SCROLL_STEP, state.page.max_offset))
    if isinstance(action, ScrollUp):
        return replace(state, scroll_offset=max(state.scroll_offset - SCROLL_STEP, 0))
    if isinstance(action, Type):
        typed = replace(state.with_form_value(element.id, action.content), focus_id=element.id)
        return _submit_search(typed, element.id) if action.press_enter else typed
    if element.role == "link":
        return _navigate(state, element.target)
    if element.role == "button" and element.submits_search:
        return _submit_search(state, state.site.search_box_id)
    if element.role == "textbox":
        return replace(state, focus_id=element.id)
    return state


def step(state: EnvState, action: Action) -> tuple[EnvState, AccessibilityTree]:
    """Advance the environment by one action.

    An action whose target is not visible is consumed: only `steps` and `invalid_actions` change.
    """
    if state.done:
        raise EpisodeDone()
    advanced = _transition(state, action)
    advanced = replace(advanced, steps=state.steps + 1)
    return advanced, observe(advanced)


class WebEnvironment:
    """Stateful facade over the pure transition functions that counts real interactions."""

    def __init__(self) -> None:
        self.step_count = 0
        self.reset_count = 0
        self._lock = threading.Lock()

    def reset(self, task: "Task") -> tuple[EnvState, AccessibilityTree]:
        with self._lock:
            self.reset_count += 1
        return reset(task)

    def step(self, state: EnvState, action: Action) -> tuple[EnvState, AccessibilityTree]:
        with self._lock:
            self.step_count += 1
        return step(state, action)
