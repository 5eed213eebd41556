"""Group-normalised advantages, sequence-level importance ratios and the clipped group objective."""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from constants import ADVANTAGE_STD_FLOOR, DEFAULT_CLIP_EPSILON, DEFAULT_LEARNING_RATE
from services.policy import PolicyParams, logprob_and_grad, logprob_sequence
from services.rollout_service import GroupTooSmall, RolloutGroup
from services.trajectory import Trajectory
from utils.errors import DreamdeskError

logger = logging.getLogger(__name__)

__all__ = [
    "GroupTooSmall",
    "MixedCheckpoint",
    "NonFiniteGradient",
    "MissingBehaviorLogprobs",
    "InvalidOptimizerSetting",
    "GroupAdvantages",
    "ObjectiveResult",
    "OptimizerState",
    "group_advantages",
    "sequence_ratio",
    "gspo_objective",
    "make_optimizer",
    "apply_update",
    "gspo_step",
]


class MixedCheckpoint(DreamdeskError):
    def __init__(self, versions: list[int]) -> None:
        super().__init__(f"group members were sampled under different checkpoints {versions}", versions=versions)


class NonFiniteGradient(DreamdeskError):
    def __init__(self) -> None:
        super().__init__("gradient contains NaN or infinite entries")


class MissingBehaviorLogprobs(DreamdeskError):
    def __init__(self, task_id: str) -> None:
        super().__init__(f"trajectory for {task_id} carries no sampling log-probabilities", task_id=task_id)


class InvalidOptimizerSetting(DreamdeskError):
    def __init__(self, name: str, value: float) -> None:
        super().__init__(f"{name} must be positive, got {value}", name=name, value=value)


@dataclass(frozen=True)
class GroupAdvantages:
    values: tuple[float, ...]
    mean: float
    std: float


@dataclass(frozen=True)
class ObjectiveResult:
    value: float
    gradient: np.ndarray
    clip_fraction: float
    ratios: tuple[float, ...]
    advantages: GroupAdvantages


@dataclass(frozen=True)
class OptimizerState:
    params: PolicyParams
    old_params: PolicyParams
    learning_rate: float = DEFAULT_LEARNING_RATE
    clip_epsilon: float = DEFAULT_CLIP_EPSILON
    momentum: float = 0.0
    refresh_interval: int = 1
    step_count: int = 0
    velocity: np.ndarray | None = field(default=None, compare=False)

    @property
    def theta_old_version(self) -> int:
        return self.old_params.version


def group_advantages(returns: list[float], floor: float = ADVANTAGE_STD_FLOOR) -> GroupAdvantages:
    """(G - mean) / std with the population std; a group whose std is at or below `floor` gets zeros."""
    values = np.asarray(returns, dtype=np.float64)
    if values.size < 2:
        raise GroupTooSmall(int(values.size))
    mean = float(values.mean())
    std = float(values.std())
    if std <= floor:
        return GroupAdvantages(tuple(0.0 for _ in values), mean, std)
    return GroupAdvantages(tuple(float(v) for v in (values - mean) / std), mean, std)


def _old_total(trajectory: Trajectory) -> float:
    for step in trajectory.steps:
        if len(step.logprobs_old) != len(step.tokens):
            raise MissingBehaviorLogprobs(trajectory.task_id)
    return math.fsum(value for step in trajectory.steps for value in step.logprobs_old)


def sequence_ratio(theta: np.ndarray, trajectory: Trajectory) -> float:
    """Geometric mean of the per-token likelihood ratios, computed in log space."""
    old_total = _old_total(trajectory)
    new_total, _ = logprob_sequence(theta, trajectory)
    return math.exp((new_total - old_total) / trajectory.token_count)


def _check_single_checkpoint(group: RolloutGroup) -> None:
    versions = sorted({member.theta_old_version for member in group.members} | {group.theta_old_version})
    if len(versions) > 1:
        raise MixedCheckpoint(versions)


def gspo_objective(theta: np.ndarray, group: RolloutGroup, clip_epsilon: float = DEFAULT_CLIP_EPSILON) -> ObjectiveResult:
    """Mean over members of min(s * A, clip(s, 1 - eps, 1 + eps) * A) and its gradient.

    A member contributes gradient only when the unclipped term is the minimum; ties count as unclipped.
    """
    _check_single_checkpoint(group)
    theta = np.asarray(theta, dtype=np.float64)
    advantages = group_advantages(group.returns)
    gradient = np.zeros_like(theta)
    terms: list[float] = []
    ratios: list[float] = []
    clipped = 0
    for member, advantage in zip(group.members, advantages.values):
        n_tokens = member.token_count
        new_total, member_grad = logprob_and_grad(theta, member)
        ratio = math.exp((new_total - _old_total(member)) / n_tokens)
        ratios.append(ratio)
        bounded = min(max(ratio, 1.0 - clip_epsilon), 1.0 + clip_epsilon)
        if ratio * advantage <= bounded * advantage:
            terms.append(ratio * advantage)
            if advantage != 0.0:
                gradient += (advantage * ratio / n_tokens) * member_grad
        else:
            terms.append(bounded * advantage)
            clipped += 1
    size = len(group.members)
    return ObjectiveResult(
        value=math.fsum(terms) / size,
        gradient=gradient / size,
        clip_fraction=clipped / size,
        ratios=tuple(ratios),
        advantages=advantages,
    )


def make_optimizer(
    params: PolicyParams,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    clip_epsilon: float = DEFAULT_CLIP_EPSILON,
    momentum: float = 0.0,
    refresh_interval: int = 1,
) -> OptimizerState:
    if learning_rate <= 0:
        raise InvalidOptimizerSetting("learning_rate", learning_rate)
    if clip_epsilon <= 0:
        raise InvalidOptimizerSetting("clip_epsilon", clip_epsilon)
    if refresh_interval < 1:
        raise InvalidOptimizerSetting("refresh_interval", refresh_interval)
    if momentum < 0:
        raise InvalidOptimizerSetting("momentum", momentum)
    return OptimizerState(params, params, learning_rate, clip_epsilon, momentum, refresh_interval)


def apply_update(state: OptimizerState, gradient: np.ndarray) -> OptimizerState:
    """One ascent step on the objective; theta_old is refreshed every `refresh_interval` updates."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteGradient()
    velocity = state.velocity
    direction = gradient
    if state.momentum > 0:
        velocity = gradient if velocity is None else state.momentum * velocity + gradient
        direction = velocity
    params = PolicyParams(state.params.theta + state.learning_rate * direction, state.params.version + 1)
    step_count = state.step_count + 1
    old_params = params if step_count % state.refresh_interval == 0 else state.old_params
    return replace(state, params=params, old_params=old_params, step_count=step_count, velocity=velocity)


def gspo_step(state: OptimizerState, group: RolloutGroup) -> tuple[OptimizerState, ObjectiveResult]:
    result = gspo_objective(state.params.theta, group, state.clip_epsilon)
    return apply_update(state, result.gradient), result
