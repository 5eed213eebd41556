"""Task generation, witness search and the expert (witness) trajectory store."""

import json
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from constants import (
    CONTENT_VOCAB_SIZE,
    DEFAULT_SITE_BRANCHING,
    DEFAULT_SITE_PAGES,
    INSTRUCTIONS,
    SITE_KINDS,
    WITNESS_MAX_ACTIONS,
)
from services import site_lexicon
from services.acctree import AccessibilityTree
from services.actions import Action, Click, GoBack, ScrollDown, ScrollUp, Stop, Type, action_from_json, action_to_json
from services.judge_service import GoalPredicate, evaluate
from services.policy import ObservationView, tokenize
from services.trajectory import Provenance, Trajectory, TrajectoryStep
from services.web_env import EnvState, InvalidSize, WebSite, generate_site, reset, step
from utils.errors import ArtifactError, DreamdeskError
from utils.rng import make_rng

logger = logging.getLogger(__name__)

TEMPLATES_BY_KIND = {
    "shop": ("find-item-price", "search-item"),
    "wiki": ("navigate-to-article",),
    "forum": ("post-lookup",),
}
_MAX_TARGET_ATTEMPTS = 20


class EmptyStore(DreamdeskError):
    def __init__(self) -> None:
        super().__init__("expert store holds no trajectories")


class NoExpertForTask(DreamdeskError):
    def __init__(self, task_id: str) -> None:
        super().__init__(f"no expert trajectory for task {task_id}", task_id=task_id)
        self.task_id = task_id


@dataclass(frozen=True)
class Task:
    task_id: str
    template: str
    query: str
    site_seed: int
    site_kind: str
    site_pages: int
    site_branching: int
    start_page: int
    goal: GoalPredicate
    content_vocab: tuple[str, ...]
    instructions: str = INSTRUCTIONS
    witnesses: tuple[tuple[Action, ...], ...] = field(default=(), compare=False)

    @property
    def site(self) -> WebSite:
        return generate_site(self.site_seed, self.site_kind, self.site_pages, self.site_branching)

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "template": self.template,
            "query": self.query,
            "site_seed": self.site_seed,
            "site_kind": self.site_kind,
            "site_pages": self.site_pages,
            "site_branching": self.site_branching,
            "start_page": self.start_page,
            "goal": self.goal.to_json(),
            "content_vocab": list(self.content_vocab),
            "instructions": self.instructions,
            "witnesses": [[action_to_json(action) for action in witness] for witness in self.witnesses],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "Task":
        return cls(
            task_id=str(data["task_id"]),
            template=str(data.get("template", "")),
            query=str(data["query"]),
            site_seed=int(data["site_seed"]),
            site_kind=str(data["site_kind"]),
            site_pages=int(data.get("site_pages", DEFAULT_SITE_PAGES)),
            site_branching=int(data.get("site_branching", DEFAULT_SITE_BRANCHING)),
            start_page=int(data.get("start_page", 0)),
            goal=GoalPredicate.from_json(data["goal"]),
            content_vocab=tuple(data["content_vocab"]),
            instructions=str(data.get("instructions", INSTRUCTIONS)),
            witnesses=tuple(
                tuple(action_from_json(action) for action in witness) for witness in data.get("witnesses", [])
            ),
        )


# ---------------------------------------------------------------------------
# Witness search
# ---------------------------------------------------------------------------


def candidate_actions(obs: AccessibilityTree, vocab: tuple[str, ...]) -> list[Action]:
    """Every non-stop action the policy grammar can express on `obs`, in a fixed order."""
    view = ObservationView(obs)
    actions: list[Action] = [Click(node.id) for node in view.slots]
    actions.extend([ScrollDown(), ScrollUp(), GoBack()])
    for slot in view.textbox_slots:
        for content in vocab:
            for press_enter in (False, True):
                actions.append(Type(view.slots[slot].id, content, press_enter))
    return actions


def _search_key(state: EnvState) -> tuple:
    # history is ignored: any page GoBack reaches is also reachable by links.
    return state.page_id, state.scroll_offset, state.focus_id, state.form_values


def find_witness(task: Task, max_actions: int = WITNESS_MAX_ACTIONS) -> tuple[Action, ...] | None:
    """Breadth-first search for a shortest action sequence, ending in Stop, that meets the goal."""
    start, obs = reset(task)
    frontier = deque([(start, obs, ())])
    seen = {_search_key(start)}
    while frontier:
        state, obs, path = frontier.popleft()
        for answer in task.content_vocab:
            if task.goal.holds(obs, answer):
                return path + (Stop(answer),)
        if len(path) + 2 > max_actions:
            continue
        for action in candidate_actions(obs, task.content_vocab):
            advanced, next_obs = step(state, action)
            key = _search_key(advanced)
            if key in seen:
                continue
            seen.add(key)
            frontier.append((advanced, next_obs, path + (action,)))
    return None


# ---------------------------------------------------------------------------
# Task templates
# ---------------------------------------------------------------------------


def _vocab(rng, required: list[str], pool: Iterable[str]) -> tuple[str, ...]:
    extras = [value for value in dict.fromkeys(pool) if value and value not in required]
    extras = [extras[index] for index in rng.permutation(len(extras))]
    body = (required + extras)[: CONTENT_VOCAB_SIZE - 1]
    body = [body[index] for index in rng.permutation(len(body))]
    return ("",) + tuple(body)


def _fact_value(fact: str) -> str:
    return fact.split(": ", 1)[1] if ": " in fact else fact


def _build_task(task_id: str, template: str, site: WebSite, page_id: int, rng) -> Task:
    page = site.pages[page_id]
    others = [other for other in site.pages[1:] if other.page_id != page_id]
    common = {
        "task_id": task_id,
        "template": template,
        "site_seed": site.seed,
        "site_kind": site.kind,
        "site_pages": len(site.pages),
        "site_branching": site.branching,
        "start_page": 0,
    }
    if template == "find-item-price":
        price = _fact_value(page.fact)
        vocab = _vocab(rng, [price], (_fact_value(other.fact) for other in others))
        goal = GoalPredicate(answer_pattern=price, answer_mode="exact", terminal_page=page.url)
        return Task(query=f"What is the price of the {page.title}?", goal=goal, content_vocab=vocab, **common)
    if template == "search-item":
        vocab = _vocab(rng, [page.title], (other.title for other in others))
        goal = GoalPredicate(terminal_page=site.home.url, form_condition=((site.search_box_id, page.title),))
        return Task(query=f"Type {page.title} into the search box and stop.", goal=goal, content_vocab=vocab, **common)
    if template == "navigate-to-article":
        vocab = _vocab(rng, [], (other.title for other in others))
        goal = GoalPredicate(terminal_page=page.url)
        return Task(query=f"Open the article about {page.title}.", goal=goal, content_vocab=vocab, **common)
    if template == "post-lookup":
        author = _fact_value(page.fact)
        vocab = _vocab(rng, [author], site_lexicon.get_authors())
        goal = GoalPredicate(answer_pattern=author, answer_mode="exact", terminal_page=page.url)
        return Task(query=f"Who wrote the post '{page.title}'?", goal=goal, content_vocab=vocab, **common)
    raise InvalidSize(f"unknown task template {template!r}")


def generate_tasks(
    seed: int,
    n: int,
    kinds: Iterable[str] = SITE_KINDS,
    n_pages: int = DEFAULT_SITE_PAGES,
    branching: int = DEFAULT_SITE_BRANCHING,
    sites_per_kind: int = 1,
) -> list[Task]:
    """Generate `n` solvable tasks; each carries the witness found for it."""
    if n < 1:
        raise InvalidSize(f"n must be at least 1, got {n}")
    kinds = tuple(kinds)
    if not kinds or any(kind not in SITE_KINDS for kind in kinds):
        raise InvalidSize(f"kinds must be drawn from {SITE_KINDS}, got {kinds}")
    if sites_per_kind < 1:
        raise InvalidSize(f"sites_per_kind must be at least 1, got {sites_per_kind}")

    rng = make_rng(seed, "tasks")
    site_seeds = {kind: [int(value) for value in rng.integers(0, 2**31, size=sites_per_kind)] for kind in kinds}
    tasks: list[Task] = []
    for index in range(n):
        kind = kinds[index % len(kinds)]
        site = generate_site(site_seeds[kind][int(rng.integers(sites_per_kind))], kind, n_pages, branching)
        templates = TEMPLATES_BY_KIND[kind]
        template = templates[int(rng.integers(len(templates)))]
        task = None
        for _ in range(_MAX_TARGET_ATTEMPTS):
            page_id = int(rng.integers(1, n_pages))
            candidate = _build_task(f"{kind}-{index:04d}-{template}", template, site, page_id, rng)
            witness = find_witness(candidate)
            if witness is not None:
                task = replace(candidate, witnesses=(witness,))
                break
            logger.warning("No witness for %s targeting page %s; retrying", candidate.task_id, page_id)
        if task is None:
            raise InvalidSize(f"could not build a solvable {template} task on site {site.seed}")
        tasks.append(task)
    logger.info("Generated %s tasks over kinds %s", len(tasks), ",".join(kinds))
    return tasks


# ---------------------------------------------------------------------------
# Expert store
# ---------------------------------------------------------------------------


def replay_witness(task: Task, actions: tuple[Action, ...]) -> Trajectory:
    """Rebuild a witness trajectory (observations and tokens) by replaying it in the real environment."""
    state, obs = reset(task)
    steps = []
    for action in actions:
        steps.append(TrajectoryStep(obs, action, tuple(tokenize(action, obs, task.content_vocab))))
        if isinstance(action, Stop):
            break
        state, obs = step(state, action)
    trajectory = Trajectory(
        task_id=task.task_id,
        query=task.query,
        content_vocab=task.content_vocab,
        steps=tuple(steps),
        provenance=Provenance.EXPERT,
    )
    reward = evaluate(task.goal, trajectory)
    return replace(trajectory, return_value=reward)


class ExpertStore:
    """Witness trajectories keyed by task id."""

    def __init__(self, tasks: Iterable[Task], trajectories: dict[str, list[Trajectory]]) -> None:
        self.tasks = {task.task_id: task for task in tasks}
        self._trajectories = {task_id: list(items) for task_id, items in trajectories.items() if items}
        self._pairs = [
            (task_id, index, step_index)
            for task_id, items in self._trajectories.items()
            for index, trajectory in enumerate(items)
            for step_index in range(len(trajectory.steps))
        ]

    @classmethod
    def from_tasks(cls, tasks: Iterable[Task]) -> "ExpertStore":
        tasks = list(tasks)
        trajectories: dict[str, list[Trajectory]] = {}
        for task in tasks:
            for witness in task.witnesses:
                trajectory = replay_witness(task, witness)
                if trajectory.return_value != 1:
                    logger.warning("Witness for %s no longer reaches the goal; skipping it", task.task_id)
                    continue
                trajectories.setdefault(task.task_id, []).append(trajectory)
        return cls(tasks, trajectories)

    def __len__(self) -> int:
        return sum(len(items) for items in self._trajectories.values())

    @property
    def state_pairs(self) -> list[tuple[str, int, int]]:
        """All (task_id, witness index, step index) triples."""
        return list(self._pairs)

    def witnesses(self, task_id: str) -> list[Trajectory]:
        return list(self._trajectories.get(task_id, []))

    def has_expert(self, task_id: str) -> bool:
        return task_id in self._trajectories

    def all_trajectories(self) -> list[Trajectory]:
        return [trajectory for items in self._trajectories.values() for trajectory in items]


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def write_tasks(tasks: Iterable[Task], path: str | Path) -> None:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8", newline="\n") as handle:
            for task in tasks:
                handle.write(json.dumps(task.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise ArtifactError(str(target), str(exc)) from exc


def read_tasks(path: str | Path) -> list[Task]:
    source = Path(path)
    tasks = []
    try:
        with source.open("r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    tasks.append(Task.from_json(json.loads(line)))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError, DreamdeskError) as exc:
                    raise ArtifactError(str(source), f"line {line_no}: {exc}") from exc
    except OSError as exc:
        raise ArtifactError(str(source), str(exc)) from exc
    return tasks
