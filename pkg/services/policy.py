"""
Linear softmax policy over a closed action-token grammar.

Actions are emitted as short token sequences (action type, element slot, content, flag, end).
Each token's logit is the sum of hashed feature weights for (context, token) pairs, which keeps
the log-likelihood and its gradient exact and cheap.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

from constants import FEATURE_DIM, INTERACTABLE_ROLES, MAX_ELEMS, POLICY_CHECKPOINT_VERSION
from services.acctree import AccessibilityTree, AccNode, iter_subtree
from services.actions import (
    ACTION_TYPES,
    Action,
    ActionType,
    Click,
    GoBack,
    ScrollDown,
    ScrollUp,
    Stop,
    Type,
    target_of,
)
from services.trajectory import Trajectory
from services.web_env import UnknownElement
from utils.errors import ArtifactError, DreamdeskError
from utils.text_utils import contains_phrase, normalize_text

logger = logging.getLogger(__name__)

FEATURE_HASH = "blake2b-64"


class UnknownContent(DreamdeskError):
    def __init__(self, content: str) -> None:
        super().__init__(f"content {content!r} is not in the task vocabulary", content=content)


class IllegalToken(DreamdeskError):
    def __init__(self, step: int, position: int) -> None:
        super().__init__(f"token {position} of step {step} is not legal here", step=step, position=position)
        self.step = step
        self.position = position


class TokenKind(str, Enum):
    ACT = "act"
    ELEM = "elem"
    CONTENT = "content"
    FLAG = "flag"
    END = "end"


@dataclass(frozen=True)
class ActionToken:
    kind: TokenKind
    value: int = 0

    def __str__(self) -> str:
        if self.kind is TokenKind.ACT:
            return f"<{ACTION_TYPES[self.value].value}>"
        if self.kind is TokenKind.END:
            return "<end>"
        return f"<{self.kind.value}:{self.value}>"


END = ActionToken(TokenKind.END)

_ARITY = {
    ActionType.CLICK: 3,
    ActionType.TYPE: 5,
    ActionType.STOP: 3,
    ActionType.SCROLL_UP: 2,
    ActionType.SCROLL_DOWN: 2,
    ActionType.GO_BACK: 2,
}


def act_token(action_type: ActionType) -> ActionToken:
    return ActionToken(TokenKind.ACT, ACTION_TYPES.index(action_type))


class ObservationView:
    """Per-observation derived data: interactable slots and searchable text."""

    def __init__(self, obs: AccessibilityTree) -> None:
        self.obs = obs

    @cached_property
    def slots(self) -> tuple[AccNode, ...]:
        nodes = [node for node in iter_subtree(self.obs.root) if node.role in INTERACTABLE_ROLES]
        return tuple(nodes[:MAX_ELEMS])

    @cached_property
    def textbox_slots(self) -> tuple[int, ...]:
        return tuple(index for index, node in enumerate(self.slots) if node.role == "textbox")

    @cached_property
    def text(self) -> str:
        return " | ".join(node.name for node in iter_subtree(self.obs.root) if node.name)

    @cached_property
    def fact_text(self) -> str:
        return " | ".join(node.name for node in iter_subtree(self.obs.root) if node.role == "text" and node.name)

    def slot_of(self, element_id: int) -> int | None:
        for index, node in enumerate(self.slots):
            if node.id == element_id:
                return index
        return None


@dataclass(frozen=True)
class PolicyContext:
    query: str
    vocab: tuple[str, ...]
    obs: AccessibilityTree
    history: tuple[Action, ...] = ()
    prefix: tuple[ActionToken, ...] = ()

    @cached_property
    def view(self) -> ObservationView:
        return ObservationView(self.obs)

    def extend(self, token: ActionToken) -> "PolicyContext":
        extended = replace(self, prefix=self.prefix + (token,))
        # the view only depends on obs
        extended.__dict__["view"] = self.view
        return extended


@dataclass(frozen=True)
class TokenDistribution:
    tokens: tuple[ActionToken, ...]
    logits: np.ndarray
    logprobs: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logprobs)


@dataclass(frozen=True, eq=False)
class PolicyParams:
    theta: np.ndarray
    version: int = 0

    def __post_init__(self) -> None:
        frozen = np.array(self.theta, dtype=np.float64, copy=True)
        frozen.setflags(write=False)
        object.__setattr__(self, "theta", frozen)

    @classmethod
    def zeros(cls, dim: int = FEATURE_DIM) -> "PolicyParams":
        return cls(np.zeros(dim, dtype=np.float64), 0)

    @property
    def dim(self) -> int:
        return int(self.theta.shape[0])


# ---------------------------------------------------------------------------
# Grammar
# ---------------------------------------------------------------------------


def legal_tokens(context: PolicyContext) -> tuple[ActionToken, ...]:
    """Tokens the grammar allows after `context.prefix`; empty once the action is complete."""
    view = context.view
    prefix = context.prefix
    if not prefix:
        allowed = []
        for action_type in ACTION_TYPES:
            if action_type is ActionType.CLICK and not view.slots:
                continue
            if action_type is ActionType.TYPE and not (view.textbox_slots and context.vocab):
                continue
            allowed.append(act_token(action_type))
        return tuple(allowed)

    action_type = ACTION_TYPES[prefix[0].value]
    position = len(prefix)
    if prefix[-1] == END:
        return ()
    if action_type is ActionType.STOP and not context.vocab:
        return (END,)
    if position >= _ARITY[action_type]:
        return ()
    if position == _ARITY[action_type] - 1:
        return (END,)
    if action_type is ActionType.CLICK:
        return tuple(ActionToken(TokenKind.ELEM, slot) for slot in range(len(view.slots)))
    if action_type is ActionType.TYPE:
        if position == 1:
            return tuple(ActionToken(TokenKind.ELEM, slot) for slot in view.textbox_slots)
        if position == 2:
            return tuple(ActionToken(TokenKind.CONTENT, index) for index in range(len(context.vocab)))
        return (ActionToken(TokenKind.FLAG, 0), ActionToken(TokenKind.FLAG, 1))
    # stop
    return tuple(ActionToken(TokenKind.CONTENT, index) for index in range(len(context.vocab)))


def tokenize(action: Action, obs: AccessibilityTree, vocab: tuple[str, ...]) -> list[ActionToken]:
    view = ObservationView(obs)
    tokens = [act_token(action.action_type)]
    if isinstance(action, Stop) and not vocab and not action.answer:
        return tokens + [END]
    if isinstance(action, (Click, Type)):
        slot = view.slot_of(action.target_id)
        if slot is None or (isinstance(action, Type) and slot not in view.textbox_slots):
            raise UnknownElement(action.target_id)
        tokens.append(ActionToken(TokenKind.ELEM, slot))
    if isinstance(action, (Type, Stop)):
        content = action.content if isinstance(action, Type) else action.answer
        if content not in vocab:
            raise UnknownContent(content)
        tokens.append(ActionToken(TokenKind.CONTENT, list(vocab).index(content)))
    if isinstance(action, Type):
        tokens.append(ActionToken(TokenKind.FLAG, int(action.press_enter)))
    tokens.append(END)
    return tokens


def detokenize(tokens: list[ActionToken], obs: AccessibilityTree, vocab: tuple[str, ...], step: int = 0) -> Action:
    context = PolicyContext("", tuple(vocab), obs)
    for position, token in enumerate(tokens):
        if token not in legal_tokens(context):
            raise IllegalToken(step, position)
        context = context.extend(token)
    if legal_tokens(context):
        raise IllegalToken(step, len(tokens))

    action_type = ACTION_TYPES[tokens[0].value]
    slots = context.view.slots
    if action_type is ActionType.CLICK:
        return Click(slots[tokens[1].value].id)
    if action_type is ActionType.TYPE:
        return Type(slots[tokens[1].value].id, vocab[tokens[2].value], bool(tokens[3].value))
    if action_type is ActionType.STOP:
        return Stop(vocab[tokens[1].value] if vocab else "")
    if action_type is ActionType.SCROLL_UP:
        return ScrollUp()
    if action_type is ActionType.SCROLL_DOWN:
        return ScrollDown()
    return GoBack()


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1 << 18)
def _bucket(feature: str, dim: int) -> int:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def _context_features(context: PolicyContext) -> list[str]:
    view = context.view
    recent = [action.action_type.value for action in context.history[-2:]]
    last = recent[-1] if recent else "none"
    before = recent[-2] if len(recent) > 1 else "none"
    query_words = normalize_text(context.query).split()
    visible_answer = any(value and contains_phrase(view.fact_text, value) for value in context.vocab)
    filled = any(view.slots[slot].name for slot in view.textbox_slots)
    return [
        "bias",
        f"prev={last}",
        f"prev2={before}|prev={last}",
        f"title_in_query={contains_phrase(context.query, context.obs.root.name)}",
        f"has_textbox={bool(view.textbox_slots)}",
        f"textbox_filled={filled}",
        f"answer_visible={visible_answer}",
        f"query_word={query_words[0] if query_words else ''}",
        f"depth={min(len(context.history), 5)}",
    ]


def _token_features(context: PolicyContext, token: ActionToken) -> list[str]:
    if token.kind is TokenKind.END:
        return []
    if token.kind is TokenKind.ACT:
        name = ACTION_TYPES[token.value].value
        return [f"act={name}|{feature}" for feature in _context_features(context)]

    act = ACTION_TYPES[context.prefix[0].value].value
    view = context.view
    if token.kind is TokenKind.ELEM:
        node = view.slots[token.value]
        last_target = target_of(context.history[-1]) if context.history else None
        in_query = contains_phrase(context.query, node.name)
        properties = [
            "bias",
            f"role={node.role}",
            f"name_in_query={in_query}",
            f"role={node.role}|name_in_query={in_query}",
            f"home={node.name == 'Home'}",
            f"focused={node.focused}",
            f"empty_name={not node.name}",
            f"slot={min(token.value, 10)}",
            f"prev_target={node.id == last_target}",
        ]
        return [f"elem|{act}|{feature}" for feature in properties]

    if token.kind is TokenKind.CONTENT:
        value = context.vocab[token.value]
        in_obs = bool(value) and contains_phrase(view.fact_text, value)
        in_query = bool(value) and contains_phrase(context.query, value)
        properties = [
            "bias",
            f"empty={not value}",
            f"in_obs={in_obs}",
            f"in_query={in_query}",
            f"in_obs={in_obs}|in_query={in_query}",
        ]
        if act == ActionType.TYPE.value:
            target = view.slots[context.prefix[1].value]
            properties.append(f"same_as_field={normalize_text(value) == normalize_text(target.name)}")
        return [f"content|{act}|{feature}" for feature in properties]

    content = context.vocab[context.prefix[2].value]
    in_query = bool(content) and contains_phrase(context.query, content)
    return [f"flag={token.value}|bias", f"flag={token.value}|content_in_query={in_query}"]


def _feature_indices(context: PolicyContext, token: ActionToken, dim: int) -> np.ndarray:
    return np.fromiter((_bucket(feature, dim) for feature in _token_features(context, token)), dtype=np.int64)


def _logsumexp(values: np.ndarray) -> float:
    peak = float(np.max(values))
    return peak + math.log(float(np.sum(np.exp(values - peak))))


def _distribution(theta: np.ndarray, context: PolicyContext) -> tuple[TokenDistribution, list[np.ndarray]]:
    tokens = legal_tokens(context)
    if not tokens:
        raise IllegalToken(0, len(context.prefix))
    dim = int(theta.shape[0])
    indices = [_feature_indices(context, token, dim) for token in tokens]
    logits = np.array([float(theta[index].sum()) for index in indices], dtype=np.float64)
    logprobs = logits - _logsumexp(logits)
    return TokenDistribution(tokens, logits, logprobs), indices


def next_token_dist(theta: np.ndarray, context: PolicyContext) -> TokenDistribution:
    return _distribution(np.asarray(theta), context)[0]


# ---------------------------------------------------------------------------
# Sampling and likelihood
# ---------------------------------------------------------------------------


def _choose(dist: TokenDistribution, temperature: float, top_p: float, rng: np.random.Generator) -> int:
    if len(dist.tokens) == 1:
        return 0
    if temperature <= 0:
        return int(np.argmax(dist.logits))
    scaled = dist.logits / temperature
    probs = np.exp(scaled - _logsumexp(scaled))
    order = np.argsort(-probs, kind="stable")
    cumulative = np.cumsum(probs[order])
    keep = min(int(np.searchsorted(cumulative, top_p)) + 1, len(order))
    kept = order[:keep]
    nucleus = probs[kept] / probs[kept].sum()
    draw = float(rng.random())
    position = min(int(np.searchsorted(np.cumsum(nucleus), draw, side="right")), keep - 1)
    return int(kept[position])


def sample_action(
    theta: np.ndarray,
    context: PolicyContext,
    temperature: float,
    top_p: float,
    rng: np.random.Generator,
) -> tuple[Action, list[ActionToken], list[float]]:
    """Sample one action token by token; temperature <= 0 decodes greedily.

    Recorded log-probabilities come from the unmodified distribution, not the tempered nucleus.
    """
    theta = np.asarray(theta)
    current = replace(context, prefix=())
    tokens: list[ActionToken] = []
    logprobs: list[float] = []
    while legal_tokens(current):
        dist = _distribution(theta, current)[0]
        index = _choose(dist, temperature, top_p, rng)
        tokens.append(dist.tokens[index])
        logprobs.append(0.0 if len(dist.tokens) == 1 else float(dist.logprobs[index]))
        current = current.extend(dist.tokens[index])
    return detokenize(tokens, context.obs, context.vocab), tokens, logprobs


def step_contexts(trajectory: Trajectory) -> list[PolicyContext]:
    actions = trajectory.actions
    return [
        PolicyContext(trajectory.query, trajectory.content_vocab, step.obs, tuple(actions[:index]))
        for index, step in enumerate(trajectory.steps)
    ]


def _score(theta: np.ndarray, trajectory: Trajectory, with_grad: bool) -> tuple[list[list[float]], np.ndarray | None]:
    theta = np.asarray(theta)
    gradient = np.zeros_like(theta, dtype=np.float64) if with_grad else None
    per_step: list[list[float]] = []
    for step_index, (context, step) in enumerate(zip(step_contexts(trajectory), trajectory.steps)):
        step_logprobs: list[float] = []
        current = context
        for position, token in enumerate(step.tokens):
            legal = legal_tokens(current)
            if token not in legal:
                raise IllegalToken(step_index, position)
            if len(legal) == 1:
                step_logprobs.append(0.0)
            else:
                dist, indices = _distribution(theta, current)
                chosen = dist.tokens.index(token)
                step_logprobs.append(float(dist.logprobs[chosen]))
                if gradient is not None:
                    probs = dist.probs
                    np.add.at(gradient, indices[chosen], 1.0)
                    for prob, index in zip(probs, indices):
                        np.add.at(gradient, index, -float(prob))
            current = current.extend(token)
        if legal_tokens(current):
            raise IllegalToken(step_index, len(step.tokens))
        per_step.append(step_logprobs)
    return per_step, gradient


def step_logprobs(theta: np.ndarray, trajectory: Trajectory) -> list[tuple[float, ...]]:
    per_step, _ = _score(theta, trajectory, with_grad=False)
    return [tuple(values) for values in per_step]


def logprob_sequence(theta: np.ndarray, trajectory: Trajectory) -> tuple[float, np.ndarray]:
    per_step, _ = _score(theta, trajectory, with_grad=False)
    flat = [value for values in per_step for value in values]
    return math.fsum(flat), np.array(flat, dtype=np.float64)


def grad_logprob(theta: np.ndarray, trajectory: Trajectory) -> np.ndarray:
    return _score(theta, trajectory, with_grad=True)[1]


def logprob_and_grad(theta: np.ndarray, trajectory: Trajectory) -> tuple[float, np.ndarray]:
    per_step, gradient = _score(theta, trajectory, with_grad=True)
    return math.fsum(value for values in per_step for value in values), gradient


def behavior_clone(
    params: PolicyParams,
    trajectories: list[Trajectory],
    learning_rate: float,
    steps: int,
) -> PolicyParams:
    """Gradient ascent on the mean demonstration log-likelihood."""
    if not trajectories or steps <= 0:
        return params
    theta = np.array(params.theta, dtype=np.float64)
    for _ in range(steps):
        gradient = np.zeros_like(theta)
        for trajectory in trajectories:
            gradient += grad_logprob(theta, trajectory)
        theta = theta + learning_rate * gradient / len(trajectories)
    logger.info("Warm-started policy on %s demonstrations for %s steps", len(trajectories), steps)
    return PolicyParams(theta, params.version)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def params_to_json(params: PolicyParams) -> dict:
    nonzero = np.flatnonzero(params.theta)
    return {
        "format_version": POLICY_CHECKPOINT_VERSION,
        "dim": params.dim,
        "feature_hash": FEATURE_HASH,
        "version": params.version,
        "weights": {str(int(index)): float(params.theta[index]) for index in nonzero},
    }


def params_from_json(data: dict, source: str = "<memory>") -> PolicyParams:
    if data.get("format_version") != POLICY_CHECKPOINT_VERSION:
        raise ArtifactError(source, f"unsupported policy format {data.get('format_version')!r}")
    if data.get("feature_hash") != FEATURE_HASH:
        raise ArtifactError(source, f"policy was built with feature hash {data.get('feature_hash')!r}")
    theta = np.zeros(int(data["dim"]), dtype=np.float64)
    for index, value in data.get("weights", {}).items():
        theta[int(index)] = float(value)
    if not np.all(np.isfinite(theta)):
        raise ArtifactError(source, "policy weights must be finite")
    return PolicyParams(theta, int(data.get("version", 0)))


def save_policy(params: PolicyParams, path: str | Path) -> None:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(params_to_json(params), sort_keys=True), encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(str(target), str(exc)) from exc


def load_policy(path: str | Path) -> PolicyParams:
    source = Path(path)
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(str(source), str(exc)) from exc
    return params_from_json(data, str(source))
