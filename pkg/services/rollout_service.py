"""
Trajectory generation for policy optimisation.

Real rollouts step the environment, imagined rollouts step the world model, and expert slots
replay verified witnesses. `build_group` interleaves the three into one optimisation group.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from constants import (
    DEFAULT_GROUP_SIZE,
    DEFAULT_MAX_DREAM,
    DEFAULT_MAX_STEPS,
    DEFAULT_RHO_EXPERT,
    DEFAULT_TEMPERATURE,
    DEFAULT_TOP_P,
)
from services.acctree import AccessibilityTree
from services.actions import Stop
from services.judge_service import Judge, RuleBasedJudge
from services.policy import PolicyContext, PolicyParams, sample_action, step_logprobs
from services.task_service import EmptyStore, ExpertStore, NoExpertForTask, Task
from services.trajectory import Provenance, Trajectory, TrajectoryStep
from services.web_env import EnvState, WebEnvironment
from services.world_model import TransitionModel, WMMetrics, imagine_step
from utils.errors import DreamdeskError
from utils.rng import make_rng, spawn_seeds

logger = logging.getLogger(__name__)

ROLLOUT_MODES = ("imagined", "real", "mixed")
_DEFAULT_JUDGE = RuleBasedJudge()


class InvalidRolloutSetting(DreamdeskError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason, reason=reason)


class GroupTooSmall(InvalidRolloutSetting):
    def __init__(self, size: int) -> None:
        super().__init__(f"a group needs at least 2 members, got {size}")
        self.details["size"] = size


@dataclass(frozen=True)
class InitialState:
    task: Task
    obs: AccessibilityTree
    step_index: int = 0
    witness_index: int | None = None


@dataclass(frozen=True)
class RolloutGroup:
    task_id: str
    members: tuple[Trajectory, ...]
    theta_old_version: int
    expert_count: int = 0
    fallbacks: int = 0
    wm_recoveries: int = 0

    @property
    def returns(self) -> list[int]:
        return [member.return_value for member in self.members]

    @property
    def expert_fraction(self) -> float:
        return self.expert_count / len(self.members) if self.members else 0.0


def _policy_step(
    theta: PolicyParams,
    task: Task,
    obs: AccessibilityTree,
    history: list,
    temperature: float,
    top_p: float,
    rng: np.random.Generator,
) -> TrajectoryStep:
    context = PolicyContext(task.query, task.content_vocab, obs, tuple(history))
    action, tokens, logprobs = sample_action(theta.theta, context, temperature, top_p, rng)
    return TrajectoryStep(obs, action, tuple(tokens), tuple(logprobs))


def rollout_real(
    env: WebEnvironment,
    task: Task,
    theta: PolicyParams,
    max_steps: int = DEFAULT_MAX_STEPS,
    rng: np.random.Generator | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    top_p: float = DEFAULT_TOP_P,
    initial: tuple[EnvState, AccessibilityTree] | None = None,
    judge: Judge = _DEFAULT_JUDGE,
) -> Trajectory:
    if max_steps < 1:
        raise InvalidRolloutSetting(f"max_steps must be at least 1, got {max_steps}")
    rng = rng if rng is not None else np.random.default_rng(0)
    state, obs = initial if initial is not None else env.reset(task)
    steps: list[TrajectoryStep] = []
    truncated = True
    for _ in range(max_steps):
        step = _policy_step(theta, task, obs, [s.action for s in steps], temperature, top_p, rng)
        steps.append(step)
        state, obs = env.step(state, step.action)
        if isinstance(step.action, Stop):
            truncated = False
            break
    trajectory = Trajectory(
        task_id=task.task_id,
        query=task.query,
        content_vocab=task.content_vocab,
        steps=tuple(steps),
        provenance=Provenance.REAL,
        truncated=truncated,
        theta_old_version=theta.version,
    )
    return replace(trajectory, return_value=judge.score(task.goal, trajectory))


def rollout_imagined(
    wm: TransitionModel,
    task: Task,
    init_obs: AccessibilityTree,
    theta: PolicyParams,
    max_dream: int = DEFAULT_MAX_DREAM,
    rng: np.random.Generator | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    top_p: float = DEFAULT_TOP_P,
    metrics: WMMetrics | None = None,
    judge: Judge = _DEFAULT_JUDGE,
) -> Trajectory:
    """Dream a trajectory from a real observation; the environment is never touched.

    Ends on Stop, on a predicted terminal state, or after `max_dream` steps (truncated).
    """
    if max_dream < 1:
        raise InvalidRolloutSetting(f"max_dream must be at least 1, got {max_dream}")
    rng = rng if rng is not None else np.random.default_rng(0)
    obs = init_obs
    steps: list[TrajectoryStep] = []
    truncated = True
    for _ in range(max_dream):
        step = _policy_step(theta, task, obs, [s.action for s in steps], temperature, top_p, rng)
        steps.append(step)
        if isinstance(step.action, Stop):
            truncated = False
            break
        obs, terminal = imagine_step(wm, obs, step.action, rng, metrics)
        if terminal:
            truncated = False
            break
    trajectory = Trajectory(
        task_id=task.task_id,
        query=task.query,
        content_vocab=task.content_vocab,
        steps=tuple(steps),
        provenance=Provenance.IMAGINED,
        truncated=truncated,
        theta_old_version=theta.version,
    )
    return replace(trajectory, return_value=judge.score(task.goal, trajectory))


def sample_initial_state(
    store: ExpertStore, rng: np.random.Generator, task_id: str | None = None
) -> InitialState:
    """Uniform over every (witness, step) pair, optionally restricted to one task."""
    pairs = store.state_pairs
    if task_id is not None:
        pairs = [pair for pair in pairs if pair[0] == task_id]
    if not pairs:
        raise EmptyStore()
    chosen_task, witness_index, step_index = pairs[int(rng.integers(len(pairs)))]
    witness = store.witnesses(chosen_task)[witness_index]
    return InitialState(store.tasks[chosen_task], witness.steps[step_index].obs, step_index, witness_index)


def sample_expert(
    store: ExpertStore,
    task_id: str,
    rng: np.random.Generator,
    theta_old: PolicyParams,
    start_index: int = 0,
    witness_index: int | None = None,
) -> Trajectory:
    """A stored witness (or its suffix from `start_index`) scored under the current theta_old."""
    witnesses = store.witnesses(task_id)
    if not witnesses:
        raise NoExpertForTask(task_id)
    if witness_index is None:
        witness_index = int(rng.integers(len(witnesses)))
    witness = witnesses[witness_index]
    start_index = min(max(start_index, 0), len(witness.steps) - 1)
    suffix = replace(
        witness,
        steps=witness.steps[start_index:],
        provenance=Provenance.EXPERT,
        return_value=1,
        truncated=False,
    )
    return suffix.with_logprobs(step_logprobs(theta_old.theta, suffix), theta_old.version)


def _real_start(env: WebEnvironment, store: ExpertStore | None, initial: InitialState) -> tuple[EnvState, AccessibilityTree]:
    state, obs = env.reset(initial.task)
    if initial.step_index == 0 or store is None or initial.witness_index is None:
        return state, obs
    witness = store.witnesses(initial.task.task_id)[initial.witness_index]
    for action in witness.actions[: initial.step_index]:
        state, obs = env.step(state, action)
    return state, obs


def plan_slots(group_size: int, rho_expert: float, mode: str, exact: bool, rng: np.random.Generator) -> list[str]:
    """One kind per slot: "expert", "imagined" or "real"."""
    if exact:
        n_expert = int(round(rho_expert * group_size))
        expert_slots = set(int(index) for index in rng.permutation(group_size)[:n_expert])
        is_expert = [index in expert_slots for index in range(group_size)]
    else:
        is_expert = [bool(rng.random() < rho_expert) for _ in range(group_size)]
    plan = []
    for expert in is_expert:
        if expert:
            plan.append("expert")
        elif mode == "mixed":
            plan.append("imagined" if rng.random() < 0.5 else "real")
        else:
            plan.append(mode)
    return plan


def build_group(
    task: Task,
    group_size: int = DEFAULT_GROUP_SIZE,
    rho_expert: float = DEFAULT_RHO_EXPERT,
    mode: str = "imagined",
    rng: np.random.Generator | None = None,
    wm: TransitionModel | None = None,
    env: WebEnvironment | None = None,
    theta_old: PolicyParams | None = None,
    store: ExpertStore | None = None,
    *,
    initial: InitialState | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    max_dream: int = DEFAULT_MAX_DREAM,
    temperature: float = DEFAULT_TEMPERATURE,
    top_p: float = DEFAULT_TOP_P,
    exact_expert_count: bool = False,
    workers: int = 1,
    judge: Judge = _DEFAULT_JUDGE,
) -> RolloutGroup:
    """Fill `group_size` slots, each an expert trajectory with probability `rho_expert`.

    All randomness is drawn from `rng` before any slot runs, so results do not depend on `workers`.
    A slot chosen as expert for a task without a witness falls back to a rollout and is counted.
    """
    if group_size < 2:
        raise GroupTooSmall(group_size)
    if not 0.0 <= rho_expert <= 1.0:
        raise InvalidRolloutSetting(f"rho_expert must lie in [0, 1], got {rho_expert}")
    if mode not in ROLLOUT_MODES:
        raise InvalidRolloutSetting(f"mode must be one of {', '.join(ROLLOUT_MODES)}, got {mode!r}")
    if mode != "real" and wm is None:
        raise InvalidRolloutSetting(f"mode {mode!r} needs a world model")
    if env is None:
        env = WebEnvironment()
    rng = rng if rng is not None else np.random.default_rng(0)
    theta_old = theta_old if theta_old is not None else PolicyParams.zeros()

    has_expert = store is not None and store.has_expert(task.task_id)
    if initial is None:
        if has_expert:
            initial = sample_initial_state(store, rng, task.task_id)
        else:
            initial = InitialState(task, env.reset(task)[1])

    plan = plan_slots(group_size, rho_expert, mode, exact_expert_count, rng)
    fallbacks = 0
    if not has_expert and "expert" in plan:
        fallback_mode = "real" if mode == "real" else "imagined"
        fallbacks = plan.count("expert")
        plan = [fallback_mode if kind == "expert" else kind for kind in plan]
        logger.warning("No expert trajectory for %s; %s slots fell back to rollouts", task.task_id, fallbacks)
    seeds = spawn_seeds(rng, group_size)
    real_start = _real_start(env, store, initial) if "real" in plan else None
    slot_metrics = [WMMetrics() for _ in range(group_size)]

    def run_slot(index: int) -> Trajectory:
        slot_rng = np.random.default_rng(seeds[index])
        kind = plan[index]
        if kind == "expert":
            return sample_expert(store, task.task_id, slot_rng, theta_old, initial.step_index, initial.witness_index)
        if kind == "real":
            return rollout_real(env, task, theta_old, max_steps, slot_rng, temperature, top_p, real_start, judge)
        return rollout_imagined(
            wm, task, initial.obs, theta_old, max_dream, slot_rng, temperature, top_p, slot_metrics[index], judge
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            members = list(executor.map(run_slot, range(group_size)))
    else:
        members = [run_slot(index) for index in range(group_size)]

    totals = WMMetrics()
    for metrics in slot_metrics:
        totals.merge(metrics)
    if totals.recoveries:
        logger.info(
            "World model recovered %s of %s predictions for %s", totals.recoveries, totals.predictions, task.task_id
        )
    return RolloutGroup(
        task_id=task.task_id,
        members=tuple(members),
        theta_old_version=theta_old.version,
        expert_count=plan.count("expert"),
        fallbacks=fallbacks,
        wm_recoveries=totals.recoveries,
    )


# ---------------------------------------------------------------------------
# Dream fidelity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DreamFidelity:
    max_dream: int
    n: int
    completion_rate: float
    divergence_rate: float
    reward_agreement: float
    mean_length: float

    def to_json(self) -> dict:
        return asdict(self)


def replay_real(
    env: WebEnvironment,
    task: Task,
    dream: Trajectory,
    start: tuple[EnvState, AccessibilityTree],
    judge: Judge = _DEFAULT_JUDGE,
) -> Trajectory:
    """The dream's actions taken in the real environment from the state the dream started in."""
    state, obs = start
    steps = []
    for step in dream.steps:
        steps.append(replace(step, obs=obs))
        state, obs = env.step(state, step.action)
    real = replace(dream, steps=tuple(steps), provenance=Provenance.REAL)
    return replace(real, return_value=judge.score(task.goal, real))


def dream_fidelity(
    wm: TransitionModel,
    store: ExpertStore,
    theta: PolicyParams,
    max_dream: int,
    n: int,
    seed: int = 0,
    env: WebEnvironment | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    top_p: float = DEFAULT_TOP_P,
    judge: Judge = _DEFAULT_JUDGE,
) -> DreamFidelity:
    """Compare `n` dreams against the same actions replayed on the real site.

    Start states and rollout seeds do not depend on `max_dream`, so a longer cap extends the
    same dreams.
    """
    if n < 1:
        raise InvalidRolloutSetting(f"n must be at least 1, got {n}")
    env = env if env is not None else WebEnvironment()
    rng = make_rng(seed, "dream-fidelity")
    seeds = spawn_seeds(rng, n)
    completed = diverged = agreed = length = 0
    for dream_seed in seeds:
        initial = sample_initial_state(store, rng)
        dream = rollout_imagined(
            wm,
            initial.task,
            initial.obs,
            theta,
            max_dream,
            np.random.default_rng(dream_seed),
            temperature,
            top_p,
            judge=judge,
        )
        real = replay_real(env, initial.task, dream, _real_start(env, store, initial), judge)
        completed += int(not dream.truncated)
        diverged += int(any(imagined.obs != seen.obs for imagined, seen in zip(dream.steps, real.steps)))
        agreed += int(dream.return_value == real.return_value)
        length += len(dream.steps)
    fidelity = DreamFidelity(max_dream, n, completed / n, diverged / n, agreed / n, length / n)
    logger.info(
        "Dream fidelity at length %s: completed %.3f, diverged %.3f, reward agreement %.3f",
        max_dream,
        fidelity.completion_rate,
        fidelity.divergence_rate,
        fidelity.reward_agreement,
    )
    return fidelity
