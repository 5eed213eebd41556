"""Transition corpus collection, cleaning and JSONL storage for world-model training."""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from constants import INSTRUCTIONS, WITNESS_MAX_ACTIONS
from services.acctree import (
    AccessibilityTree,
    EditError,
    EditScript,
    InvalidTree,
    ParseError,
    apply,
    canonicalize,
    diff,
    parse,
    serialize,
)
from services.actions import (
    ACTION_TYPES,
    Action,
    ActionType,
    Click,
    GoBack,
    InvalidAction,
    ScrollDown,
    ScrollUp,
    Stop,
    Type,
    action_from_json,
    action_to_json,
    target_of,
)
from services.task_service import Task
from services.web_env import InvalidSize, WebEnvironment
from services.world_model import TERMINAL_SCRIPT
from utils.errors import ArtifactError
from utils.rng import make_rng

logger = logging.getLogger(__name__)

MISSING_OBSERVATION = "missing observation"
INVALID_ACTION = "invalid action"
INCONSISTENT_TRANSITION = "inconsistent state transition"
DROP_REASONS = (MISSING_OBSERVATION, INVALID_ACTION, INCONSISTENT_TRANSITION)


@dataclass(frozen=True)
class Transition:
    obs: AccessibilityTree
    action: Action
    next_obs: AccessibilityTree
    delta: EditScript
    terminal: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "obs": serialize(self.obs),
            "action": action_to_json(self.action),
            "next_obs": serialize(self.next_obs),
            "delta": self.delta.to_json(),
            "terminal": self.terminal,
        }


@dataclass(frozen=True)
class TransitionCorpus:
    instructions: str
    transitions: tuple[Transition, ...]
    provenance: str = "collected"


@dataclass(frozen=True)
class RawCorpus:
    """Corpus records as stored, before any validation."""

    instructions: str
    provenance: str
    records: tuple[Any, ...]


@dataclass(frozen=True)
class CleaningReport:
    corpus: TransitionCorpus
    drop_counts: dict[str, int] = field(default_factory=dict)

    @property
    def dropped(self) -> int:
        return sum(self.drop_counts.values())


def make_transition(obs: AccessibilityTree, action: Action, next_obs: AccessibilityTree) -> Transition:
    if isinstance(action, Stop):
        return Transition(obs, action, next_obs, TERMINAL_SCRIPT, True)
    return Transition(obs, action, next_obs, diff(obs, next_obs), False)


def random_action(obs: AccessibilityTree, vocab: tuple[str, ...], rng: np.random.Generator) -> Action:
    """Uniform over the six action types, then uniform over that type's arguments."""
    action_type = ACTION_TYPES[int(rng.integers(len(ACTION_TYPES)))]
    nodes = list(obs.index.values())
    if action_type is ActionType.CLICK:
        clickable = [node for node in nodes if node.role in ("link", "button", "textbox")] or nodes
        return Click(clickable[int(rng.integers(len(clickable)))].id)
    if action_type is ActionType.TYPE:
        boxes = [node for node in nodes if node.role == "textbox"] or nodes
        content = vocab[int(rng.integers(len(vocab)))] if vocab else ""
        return Type(boxes[int(rng.integers(len(boxes)))].id, content, bool(rng.integers(2)))
    if action_type is ActionType.SCROLL_UP:
        return ScrollUp()
    if action_type is ActionType.SCROLL_DOWN:
        return ScrollDown()
    if action_type is ActionType.GO_BACK:
        return GoBack()
    return Stop(vocab[int(rng.integers(len(vocab)))] if vocab else "")


def collect_corpus(
    env: WebEnvironment,
    tasks: list[Task],
    n_transitions: int,
    seed: int,
    explore_prob: float = 0.5,
    max_episode_steps: int = WITNESS_MAX_ACTIONS,
) -> TransitionCorpus:
    """Follow task witnesses, leaving them for uniform random exploration with `explore_prob` per step."""
    if n_transitions < 1:
        raise InvalidSize(f"n_transitions must be at least 1, got {n_transitions}")
    if not tasks:
        raise InvalidSize("collecting a corpus needs at least one task")
    rng = make_rng(seed, "corpus")
    transitions: list[Transition] = []
    episodes = 0
    while len(transitions) < n_transitions:
        task = tasks[int(rng.integers(len(tasks)))]
        witness = task.witnesses[0] if task.witnesses else ()
        state, obs = env.reset(task)
        following = True
        episodes += 1
        for step_index in range(max_episode_steps):
            if following and step_index < len(witness) and rng.random() >= explore_prob:
                action = witness[step_index]
            else:
                following = False
                action = random_action(obs, task.content_vocab, rng)
            state, next_obs = env.step(state, action)
            transitions.append(make_transition(obs, action, next_obs))
            if len(transitions) >= n_transitions or isinstance(action, Stop):
                break
            obs = next_obs
    logger.info("Collected %s transitions from %s episodes", len(transitions), episodes)
    return TransitionCorpus(INSTRUCTIONS, tuple(transitions), provenance=f"collected:seed={seed}")


def to_raw(corpus: TransitionCorpus) -> RawCorpus:
    return RawCorpus(corpus.instructions, corpus.provenance, tuple(t.to_json() for t in corpus.transitions))


def _clean_record(record: Any) -> tuple[Transition | None, str | None]:
    if not isinstance(record, dict):
        return None, MISSING_OBSERVATION
    try:
        obs = parse(record["obs"])
        next_obs = parse(record["next_obs"])
    except (KeyError, TypeError, AttributeError, ParseError):
        return None, MISSING_OBSERVATION

    try:
        action = action_from_json(record["action"])
    except (KeyError, TypeError, InvalidAction):
        return None, INVALID_ACTION
    target = target_of(action)
    if target is not None and obs.find(target) is None:
        return None, INVALID_ACTION

    try:
        delta = EditScript.from_json(record["delta"])
        terminal = bool(record["terminal"])
        if apply(obs, delta) != next_obs or delta.terminal != terminal or isinstance(action, Stop) != terminal:
            return None, INCONSISTENT_TRANSITION
        delta = canonicalize(delta, obs)
    except (KeyError, TypeError, EditError, InvalidTree):
        return None, INCONSISTENT_TRANSITION
    return Transition(obs, action, next_obs, delta, terminal), None


def clean_corpus(raw: RawCorpus) -> CleaningReport:
    """Drop unusable records, preserving order, and count each drop by reason."""
    kept: list[Transition] = []
    drops = Counter({reason: 0 for reason in DROP_REASONS})
    for record in raw.records:
        transition, reason = _clean_record(record)
        if transition is None:
            drops[reason] += 1
        else:
            kept.append(transition)
    logger.info(
        "Cleaned corpus: kept %s of %s (%s)",
        len(kept),
        len(raw.records),
        ", ".join(f"{reason}={count}" for reason, count in drops.items()),
    )
    return CleaningReport(TransitionCorpus(raw.instructions, tuple(kept), raw.provenance), dict(drops))


def split_corpus(
    corpus: TransitionCorpus, heldout_fraction: float = 0.2, seed: int = 0
) -> tuple[TransitionCorpus, TransitionCorpus]:
    """Random train/held-out split; both halves keep corpus order."""
    n = len(corpus.transitions)
    n_heldout = min(n - 1, max(1, int(round(n * heldout_fraction)))) if n > 1 else 0
    order = make_rng(seed, "corpus-split").permutation(n)
    heldout_index = set(int(index) for index in order[:n_heldout])
    train = tuple(t for index, t in enumerate(corpus.transitions) if index not in heldout_index)
    heldout = tuple(t for index, t in enumerate(corpus.transitions) if index in heldout_index)
    return (
        TransitionCorpus(corpus.instructions, train, corpus.provenance),
        TransitionCorpus(corpus.instructions, heldout, corpus.provenance),
    )


def action_type_histogram(corpus: TransitionCorpus) -> dict[str, int]:
    counts = Counter(t.action.action_type.value for t in corpus.transitions)
    return {action_type.value: counts.get(action_type.value, 0) for action_type in ACTION_TYPES}


def write_corpus(corpus: TransitionCorpus | RawCorpus, path: str | Path) -> None:
    raw = corpus if isinstance(corpus, RawCorpus) else to_raw(corpus)
    target = Path(path)
    header = {"header": True, "instructions": raw.instructions, "provenance": raw.provenance, "count": len(raw.records)}
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8", newline="\n") as handle:
            handle.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
            for record in raw.records:
                handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise ArtifactError(str(target), str(exc)) from exc


def read_corpus(path: str | Path) -> RawCorpus:
    """Read a corpus file without validating records; undecodable lines are kept as None."""
    source = Path(path)
    instructions, provenance = INSTRUCTIONS, str(source)
    records: list[Any] = []
    try:
        with source.open("r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    logger.warning("Undecodable corpus line %s in %s", line_no, source)
                    records.append(None)
                    continue
                if line_no == 1 and isinstance(record, dict) and record.get("header"):
                    instructions = record.get("instructions", instructions)
                    provenance = record.get("provenance", provenance)
                    continue
                records.append(record)
    except OSError as exc:
        raise ArtifactError(str(source), str(exc)) from exc
    return RawCorpus(instructions, provenance, tuple(records))


def load_clean_corpus(path: str | Path) -> CleaningReport:
    return clean_corpus(read_corpus(path))


def merge_corpora(corpora: Iterable[TransitionCorpus]) -> TransitionCorpus:
    corpora = list(corpora)
    transitions = tuple(t for corpus in corpora for t in corpus.transitions)
    instructions = corpora[0].instructions if corpora else INSTRUCTIONS
    return TransitionCorpus(instructions, transitions, "merged")
