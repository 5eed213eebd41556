"""
Transition models over canonical edit scripts.

`WorldModel` is a smoothed categorical keyed on the neighbourhood of the action's target (fine
key) with an (element role, action type) backoff (coarse key). `FrozenPriorWM` is a hand-written
rule prior that needs no data. Both serve imagined rollouts through `predict_delta` and
`imagine_step`.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Protocol
from urllib.parse import urlsplit

import numpy as np

from constants import DEFAULT_WM_ALPHA, SCROLL_STEP, WM_CHECKPOINT_VERSION
from services.acctree import (
    EMPTY_SCRIPT,
    AccessibilityTree,
    AccNode,
    EditError,
    EditOp,
    EditScript,
    InsertNode,
    InvalidTree,
    MarkTerminal,
    RemoveNode,
    ReplaceTree,
    SetFocus,
    SetName,
    apply,
    canonicalize,
    serialize,
)
from services.actions import Action, Click, ScrollDown, Stop, Type, action_to_json, target_of
from utils.errors import ArtifactError, DreamdeskError
from utils.text_utils import slugify

if TYPE_CHECKING:
    from services.corpus_service import TransitionCorpus

logger = logging.getLogger(__name__)

TERMINAL_SCRIPT = EditScript((MarkTerminal(),))
NOVEL = "<novel>"
SIBLING_RADIUS = 2
PRIOR_NOVEL_MASS = 0.01


class EmptyCorpus(DreamdeskError):
    def __init__(self) -> None:
        super().__init__("corpus contains no transitions")


class InvalidModelParameter(DreamdeskError):
    def __init__(self, name: str, value: Any, reason: str) -> None:
        super().__init__(f"{name}={value!r}: {reason}", parameter=name, value=value)


def _check_rate(rate: float) -> float:
    if not 0.0 <= rate <= 1.0:
        raise InvalidModelParameter("hallucination_rate", rate, "must lie in [0, 1]")
    return float(rate)


@dataclass
class WMMetrics:
    predictions: int = 0
    recoveries: int = 0

    def merge(self, other: "WMMetrics") -> None:
        self.predictions += other.predictions
        self.recoveries += other.recoveries


@dataclass(frozen=True)
class ScriptDistribution:
    scripts: tuple[EditScript, ...]
    probs: tuple[float, ...]

    def argmax(self) -> int:
        return int(np.argmax(np.asarray(self.probs)))

    def sample(self, rng: np.random.Generator) -> int:
        cumulative = np.cumsum(np.asarray(self.probs))
        position = int(np.searchsorted(cumulative, float(rng.random()) * cumulative[-1], side="right"))
        return min(position, len(self.scripts) - 1)

    def prob_of(self, script: EditScript) -> float:
        key = script.key()
        return math.fsum(prob for candidate, prob in zip(self.scripts, self.probs) if candidate.key() == key)


class TransitionModel(Protocol):
    hallucination_rate: float

    def distribution(self, obs: AccessibilityTree, action: Action) -> ScriptDistribution: ...

    def score(self, obs: AccessibilityTree, action: Action, delta: EditScript) -> float: ...

    def knows(self, obs: AccessibilityTree, action: Action) -> bool: ...


def _merge_outcomes(outcomes: list[tuple[EditScript, float]]) -> ScriptDistribution:
    merged: dict[str, list] = {}
    for script, prob in outcomes:
        entry = merged.setdefault(script.key(), [script, 0.0])
        entry[1] += prob
    return ScriptDistribution(tuple(entry[0] for entry in merged.values()), tuple(entry[1] for entry in merged.values()))


# ---------------------------------------------------------------------------
# Context keys
# ---------------------------------------------------------------------------


def _signature(node: AccNode) -> list:
    return [node.id, node.role, node.name, node.focused]


def fine_key(obs: AccessibilityTree, action: Action) -> str:
    """Hash of the action plus the target, its parent and nearby siblings (whole tree if untargeted)."""
    payload: dict[str, Any] = {"action": action_to_json(action)}
    target = target_of(action)
    node = obs.find(target) if target is not None else None
    if target is None:
        payload["tree"] = serialize(obs)
    elif node is None:
        payload["missing"] = True
    else:
        parent_id = obs.parents[target]
        parent = obs.index[parent_id] if parent_id is not None else None
        siblings = parent.children if parent is not None else (node,)
        position = next(index for index, sibling in enumerate(siblings) if sibling.id == target)
        window = siblings[max(0, position - SIBLING_RADIUS) : position + SIBLING_RADIUS + 1]
        payload["target"] = _signature(node)
        payload["parent"] = _signature(parent) if parent is not None else None
        payload["siblings"] = [_signature(sibling) for sibling in window]
    encoded = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.blake2b(encoded, digest_size=16).hexdigest()


def coarse_key(obs: AccessibilityTree, action: Action) -> str:
    target = target_of(action)
    if target is None:
        role = "-"
    else:
        node = obs.find(target)
        role = node.role if node is not None else "missing"
    return f"{role}|{action.action_type.value}"


def _categorical(counts: dict[str, int], alpha: float) -> list[tuple[str, float]]:
    total = sum(counts.values())
    denominator = total + alpha * (len(counts) + 1)
    outcomes = [(key, (count + alpha) / denominator) for key, count in counts.items()]
    outcomes.append((NOVEL, alpha / denominator))
    return outcomes


def _reground_op(op: EditOp, mapping: dict[int, int], old_content: str | None, new_content: str | None) -> EditOp:
    if isinstance(op, InsertNode):
        return replace(op, parent_id=mapping.get(op.parent_id, op.parent_id))
    if isinstance(op, (RemoveNode, SetFocus)) and op.node_id is not None:
        return replace(op, node_id=mapping.get(op.node_id, op.node_id))
    if isinstance(op, SetName):
        name = new_content if old_content is not None and new_content is not None and op.name == old_content else op.name
        return SetName(mapping.get(op.node_id, op.node_id), name)
    return op


# ---------------------------------------------------------------------------
# Learned model
# ---------------------------------------------------------------------------


class WorldModel:
    def __init__(
        self,
        fine: dict[str, dict[str, int]],
        coarse: dict[str, dict[str, int]],
        coarse_targets: dict[str, dict[str, dict[str, Any]]],
        alpha: float = DEFAULT_WM_ALPHA,
        hallucination_rate: float = 0.0,
        seed: int = 0,
    ) -> None:
        if not alpha > 0:
            raise InvalidModelParameter("alpha", alpha, "must be positive")
        self.fine = fine
        self.coarse = coarse
        self.coarse_targets = coarse_targets
        self.alpha = float(alpha)
        self.hallucination_rate = _check_rate(hallucination_rate)
        self.seed = int(seed)
        self._scripts: dict[str, EditScript] = {}

    def with_hallucination_rate(self, rate: float) -> "WorldModel":
        return WorldModel(self.fine, self.coarse, self.coarse_targets, self.alpha, rate, self.seed)

    def script(self, key: str) -> EditScript:
        cached = self._scripts.get(key)
        if cached is None:
            cached = EditScript.from_json(json.loads(key))
            self._scripts[key] = cached
        return cached

    def knows(self, obs: AccessibilityTree, action: Action) -> bool:
        return fine_key(obs, action) in self.fine

    def key_distribution(self, key: str, level: str = "fine") -> dict[str, float]:
        """Smoothed probabilities for one context key, NOVEL included."""
        table = self.fine if level == "fine" else self.coarse
        return dict(_categorical(table.get(key, {}), self.alpha))

    def _components(self, obs: AccessibilityTree, action: Action) -> list[tuple[float, dict[str, int]]]:
        fine = self.fine.get(fine_key(obs, action))
        coarse = self.coarse.get(coarse_key(obs, action), {})
        if fine is None:
            return [(1.0, coarse)]
        rate = self.hallucination_rate
        components = []
        if rate < 1.0:
            components.append((1.0 - rate, fine))
        if rate > 0.0:
            components.append((rate, coarse))
        return components

    def resolve_novel(self, obs: AccessibilityTree, action: Action) -> EditScript:
        """Most frequent coarse-level script, re-targeted at this action's element when it applies."""
        key = coarse_key(obs, action)
        counts = self.coarse.get(key)
        if not counts:
            return EMPTY_SCRIPT
        best = max(counts, key=counts.get)
        script = self.script(best)
        origin = self.coarse_targets.get(key, {}).get(best, {})
        target = target_of(action)
        mapping = {}
        if origin.get("target") is not None and target is not None:
            mapping[int(origin["target"])] = target
        new_content = action.content if isinstance(action, Type) else None
        script = EditScript(
            tuple(_reground_op(op, mapping, origin.get("content"), new_content) for op in script.ops)
        )
        try:
            return canonicalize(script, obs)
        except (EditError, InvalidTree):
            return EMPTY_SCRIPT

    def distribution(self, obs: AccessibilityTree, action: Action) -> ScriptDistribution:
        outcomes: list[tuple[EditScript, float]] = []
        novel: EditScript | None = None
        for weight, counts in self._components(obs, action):
            for key, prob in _categorical(counts, self.alpha):
                if key == NOVEL:
                    if novel is None:
                        novel = self.resolve_novel(obs, action)
                    outcomes.append((novel, weight * prob))
                else:
                    outcomes.append((self.script(key), weight * prob))
        return _merge_outcomes(outcomes)

    def score(self, obs: AccessibilityTree, action: Action, delta: EditScript) -> float:
        """Log-likelihood of `delta` with NOVEL absorbing every script a key has not seen."""
        if isinstance(action, Stop):
            return 0.0 if delta.terminal else -math.inf
        key = delta.key()
        total = 0.0
        for weight, counts in self._components(obs, action):
            probabilities = dict(_categorical(counts, self.alpha))
            total += weight * probabilities.get(key, probabilities[NOVEL])
        return math.log(total)

    def to_json(self) -> dict[str, Any]:
        return {
            "format_version": WM_CHECKPOINT_VERSION,
            "alpha": self.alpha,
            "hallucination_rate": self.hallucination_rate,
            "seed": self.seed,
            "fine": self.fine,
            "coarse": self.coarse,
            "coarse_targets": self.coarse_targets,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any], source: str = "<memory>") -> "WorldModel":
        if data.get("format_version") != WM_CHECKPOINT_VERSION:
            raise ArtifactError(source, f"unsupported world model format {data.get('format_version')!r}")
        try:
            return cls(
                fine={key: {k: int(v) for k, v in counts.items()} for key, counts in data["fine"].items()},
                coarse={key: {k: int(v) for k, v in counts.items()} for key, counts in data["coarse"].items()},
                coarse_targets=data.get("coarse_targets", {}),
                alpha=float(data["alpha"]),
                hallucination_rate=float(data.get("hallucination_rate", 0.0)),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ArtifactError(source, f"malformed world model: {exc}") from exc


def train_wm(
    corpus: "TransitionCorpus",
    alpha: float = DEFAULT_WM_ALPHA,
    seed: int = 0,
    hallucination_rate: float = 0.0,
) -> WorldModel:
    """Count canonical deltas per fine and coarse key. Stop transitions are not counted (forced terminal)."""
    if not corpus.transitions:
        raise EmptyCorpus()
    if not alpha > 0:
        raise InvalidModelParameter("alpha", alpha, "must be positive")
    fine: dict[str, dict[str, int]] = {}
    coarse: dict[str, dict[str, int]] = {}
    targets: dict[str, dict[str, dict[str, Any]]] = {}
    for transition in corpus.transitions:
        if isinstance(transition.action, Stop):
            continue
        script_key = transition.delta.key()
        fine_counts = fine.setdefault(fine_key(transition.obs, transition.action), {})
        fine_counts[script_key] = fine_counts.get(script_key, 0) + 1
        ckey = coarse_key(transition.obs, transition.action)
        coarse_counts = coarse.setdefault(ckey, {})
        coarse_counts[script_key] = coarse_counts.get(script_key, 0) + 1
        targets.setdefault(ckey, {}).setdefault(
            script_key,
            {
                "target": target_of(transition.action),
                "content": transition.action.content if isinstance(transition.action, Type) else None,
            },
        )
    logger.info(
        "Trained world model on %s transitions: %s fine keys, %s coarse keys (alpha=%s)",
        len(corpus.transitions),
        len(fine),
        len(coarse),
        alpha,
    )
    return WorldModel(fine, coarse, targets, alpha, hallucination_rate, seed)


# ---------------------------------------------------------------------------
# Rule prior
# ---------------------------------------------------------------------------


def _synthetic_page(obs: AccessibilityTree, title: str) -> ReplaceTree:
    next_id = max(obs.index) + 1
    root = AccNode(
        next_id,
        "root",
        title,
        False,
        (AccNode(next_id + 1, "heading", title), AccNode(next_id + 2, "link", "Home")),
    )
    parts = urlsplit(obs.url)
    url = f"{parts.scheme}://{parts.netloc}/page/{slugify(title)}" if parts.netloc else f"page/{slugify(title)}"
    return ReplaceTree(root, url if url != obs.url else None)


class FrozenPriorWM:
    """Data-free rule prior: links open a page for a random visible link, typing fills the field,
    scrolling drops the top of the window. `hallucination_rate` mixes in empty predictions."""

    def __init__(self, hallucination_rate: float = 0.0) -> None:
        self.hallucination_rate = _check_rate(hallucination_rate)

    def knows(self, obs: AccessibilityTree, action: Action) -> bool:
        return False

    def _rule_outcomes(self, obs: AccessibilityTree, action: Action) -> list[tuple[EditScript, float]]:
        target = target_of(action)
        node = obs.find(target) if target is not None else None
        if isinstance(action, Type) and node is not None and node.role == "textbox":
            script = EditScript((SetName(node.id, action.content), SetFocus(node.id)))
            return [(canonicalize(script, obs), 1.0)]
        if isinstance(action, Click) and node is not None and node.role == "link":
            links = [item for item in obs.index.values() if item.role == "link"]
            return [(EditScript((_synthetic_page(obs, link.name),)), 1.0 / len(links)) for link in links]
        if isinstance(action, Click) and node is not None and node.role == "textbox":
            return [(canonicalize(EditScript((SetFocus(node.id),)), obs), 1.0)]
        if isinstance(action, ScrollDown):
            window = obs.root.children[1 : 1 + SCROLL_STEP]
            return [(EditScript(tuple(RemoveNode(item.id) for item in window)), 1.0)]
        return [(EMPTY_SCRIPT, 1.0)]

    def distribution(self, obs: AccessibilityTree, action: Action) -> ScriptDistribution:
        rate = self.hallucination_rate
        outcomes = [(script, (1.0 - rate) * prob) for script, prob in self._rule_outcomes(obs, action)]
        outcomes.append((EMPTY_SCRIPT, rate))
        merged = _merge_outcomes([(script, prob) for script, prob in outcomes if prob > 0.0])
        return merged

    def score(self, obs: AccessibilityTree, action: Action, delta: EditScript) -> float:
        if isinstance(action, Stop):
            return 0.0 if delta.terminal else -math.inf
        prob = self.distribution(obs, action).prob_of(delta)
        if prob > 0.0:
            return math.log((1.0 - PRIOR_NOVEL_MASS) * prob)
        return math.log(PRIOR_NOVEL_MASS)


def frozen_prior_wm(hallucination_rate: float = 0.0) -> FrozenPriorWM:
    return FrozenPriorWM(hallucination_rate)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def predict_delta(
    wm: TransitionModel,
    obs: AccessibilityTree,
    action: Action,
    rng: np.random.Generator | None,
    argmax: bool = False,
) -> tuple[EditScript, float, bool]:
    if isinstance(action, Stop):
        return TERMINAL_SCRIPT, 0.0, True
    dist = wm.distribution(obs, action)
    index = dist.argmax() if argmax or rng is None else dist.sample(rng)
    script = dist.scripts[index]
    return script, math.log(dist.probs[index]), script.terminal


def imagine_step(
    wm: TransitionModel,
    obs: AccessibilityTree,
    action: Action,
    rng: np.random.Generator | None,
    metrics: WMMetrics | None = None,
    argmax: bool = False,
) -> tuple[AccessibilityTree, bool]:
    """Predicted next observation; a script that does not apply degrades to the empty script."""
    script, _, terminal = predict_delta(wm, obs, action, rng, argmax)
    if metrics is not None:
        metrics.predictions += 1
    try:
        return apply(obs, script), terminal
    except (EditError, InvalidTree) as exc:
        logger.debug("Recovered from unusable world model prediction: %s", exc)
        if metrics is not None:
            metrics.recoveries += 1
        return obs, False


# ---------------------------------------------------------------------------
# Evaluation and checkpoints
# ---------------------------------------------------------------------------


def eval_wm(wm: TransitionModel, heldout: "TransitionCorpus") -> dict[str, float]:
    if not heldout.transitions:
        raise EmptyCorpus()
    exact = terminal_hits = novel = 0
    losses = []
    for transition in heldout.transitions:
        script, _, terminal = predict_delta(wm, transition.obs, transition.action, None, argmax=True)
        exact += int(script.key() == transition.delta.key())
        terminal_hits += int(terminal == transition.terminal)
        novel += int(not wm.knows(transition.obs, transition.action))
        losses.append(-wm.score(transition.obs, transition.action, transition.delta))
    n = len(heldout.transitions)
    return {
        "exact_match_rate": exact / n,
        "mean_nll": math.fsum(losses) / n,
        "terminal_accuracy": terminal_hits / n,
        "novel_rate": novel / n,
        "n": n,
    }


def save_wm(wm: WorldModel, path: str | Path) -> None:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(wm.to_json(), ensure_ascii=False), encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(str(target), str(exc)) from exc


def load_wm(path: str | Path) -> WorldModel:
    source = Path(path)
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(str(source), str(exc)) from exc
    return WorldModel.from_json(data, str(source))
