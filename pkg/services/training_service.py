"""
Imagination-based policy training.

Each update samples a task, builds a rollout group from theta_old, scores it with the judge and
takes one ascent step on the clipped group objective. Per-update randomness is derived from the
master seed and the update index, so a run resumed from a checkpoint replays the same updates.
"""

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd

from config_manager import TrainConfig
from constants import DEFAULT_MAX_STEPS, METRICS_COLUMNS
from services.db_service import DbService
from services.gspo_service import OptimizerState, gspo_step, make_optimizer
from services.policy import PolicyParams, behavior_clone, params_from_json, params_to_json, save_policy
from services.rollout_service import build_group, rollout_real
from services.task_service import ExpertStore, Task, read_tasks
from services.web_env import WebEnvironment
from services.world_model import TransitionModel, WorldModel, load_wm
from utils.errors import ArtifactError
from utils.rng import make_rng

logger = logging.getLogger(__name__)

TRAINING_CHECKPOINT_VERSION = 1
CHECKPOINT_FILE = "checkpoint.json"
POLICY_FILE = "policy.json"
METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"


@dataclass(frozen=True)
class TrainingCheckpoint:
    config_hash: str
    updates: int
    optimizer: OptimizerState
    metrics: tuple[dict[str, Any], ...]


@dataclass(frozen=True)
class TrainingResult:
    params: PolicyParams
    metrics: pd.DataFrame
    updates: int
    optimizer: OptimizerState
    rows: tuple[dict[str, Any], ...] = ()


@dataclass(frozen=True)
class EvaluationReport:
    success_rate: float
    per_kind: dict[str, float]
    n: int

    def to_json(self) -> dict[str, Any]:
        return {"success_rate": self.success_rate, "per_kind": dict(self.per_kind), "n": self.n}


@dataclass(frozen=True)
class RunSummary:
    out_dir: str
    updates: int
    initial_success_rate: float
    final_success_rate: float
    per_kind: dict[str, float] = field(default_factory=dict)
    run_id: int | None = None

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def split_tasks(tasks: list[Task], eval_fraction: float, seed: int) -> tuple[list[Task], list[Task]]:
    """Held-out evaluation tasks; with no held-out share the training tasks double as evaluation tasks."""
    n_eval = min(len(tasks) - 1, int(round(len(tasks) * eval_fraction)))
    if n_eval <= 0:
        return list(tasks), list(tasks)
    order = make_rng(seed, "eval-split").permutation(len(tasks))
    held = set(int(index) for index in order[:n_eval])
    train_tasks = [task for index, task in enumerate(tasks) if index not in held]
    eval_tasks = [task for index, task in enumerate(tasks) if index in held]
    return train_tasks, eval_tasks


def epoch_count(n_tasks: int, epochs: int, max_updates: int | None) -> int:
    """Passes over the training tasks; a `max_updates` budget adds passes until it can be spent."""
    if max_updates is None:
        return epochs
    return max(epochs, math.ceil(max_updates / n_tasks))


def _update_schedule(n_tasks: int, epochs: int, seed: int) -> Iterable[tuple[int, int]]:
    update = 0
    for epoch in range(epochs):
        for index in make_rng(seed, f"tasks:epoch{epoch}").permutation(n_tasks):
            yield update, int(index)
            update += 1


def warm_start(params: PolicyParams, store: ExpertStore, task_ids: set[str], config: TrainConfig) -> PolicyParams:
    if config.warmstart_steps <= 0:
        return params
    demos = [trajectory for trajectory in store.all_trajectories() if trajectory.task_id in task_ids]
    return behavior_clone(params, demos, config.warmstart_lr, config.warmstart_steps)


def train(
    config: TrainConfig,
    tasks: list[Task],
    wm: TransitionModel | None,
    env: WebEnvironment,
    store: ExpertStore,
    seed: int | None = None,
    checkpoint: TrainingCheckpoint | None = None,
    initial_params: PolicyParams | None = None,
    out_dir: str | Path | None = None,
) -> TrainingResult:
    """Run the update loop over `tasks`; checkpoints are written to `out_dir` when one is given."""
    seed = config.seed if seed is None else seed
    if not tasks:
        raise ArtifactError(config.tasks_path, "no training tasks")
    if checkpoint is not None:
        if checkpoint.config_hash != config.fingerprint():
            raise ArtifactError(str(out_dir or config.out_dir), "checkpoint was written with a different config")
        state = checkpoint.optimizer
        rows = list(checkpoint.metrics)
        start = checkpoint.updates
        logger.info("Resuming training at update %s", start)
    else:
        params = initial_params if initial_params is not None else PolicyParams.zeros(config.feature_dim)
        state = make_optimizer(
            params, config.learning_rate, config.clip_epsilon, config.momentum, config.old_refresh_interval
        )
        rows = []
        start = 0

    last_update = start
    epochs = epoch_count(len(tasks), config.epochs, config.max_updates)
    for update, task_index in _update_schedule(len(tasks), epochs, seed):
        if config.max_updates is not None and update >= config.max_updates:
            break
        if update < start:
            continue
        task = tasks[task_index]
        began = time.perf_counter()
        group = build_group(
            task,
            config.group_size,
            config.rho_expert,
            config.mode,
            make_rng(seed, f"rollouts:{update}"),
            wm,
            env,
            state.old_params,
            store,
            max_steps=config.max_steps,
            max_dream=config.max_dream,
            temperature=config.temperature,
            top_p=config.top_p,
            exact_expert_count=config.exact_expert_count,
            workers=config.workers,
        )
        state, result = gspo_step(state, group)
        elapsed = int((time.perf_counter() - began) * 1000) if config.record_wallclock else 0
        row = {
            "update": update,
            "J": result.value,
            "mean_return": float(np.mean(group.returns)),
            "clip_fraction": result.clip_fraction,
            "expert_fraction": group.expert_fraction,
            "wm_recoveries": group.wm_recoveries,
            "wallclock_ms": elapsed,
        }
        rows.append(row)
        last_update = update + 1
        logger.info(
            "update=%s task=%s J=%.4f mean_return=%.3f clip=%.3f expert=%.3f",
            update,
            task.task_id,
            result.value,
            row["mean_return"],
            result.clip_fraction,
            group.expert_fraction,
        )
        if out_dir is not None and last_update % config.checkpoint_every == 0:
            save_checkpoint(TrainingCheckpoint(config.fingerprint(), last_update, state, tuple(rows)), out_dir)

    metrics = pd.DataFrame(rows, columns=list(METRICS_COLUMNS))
    return TrainingResult(state.params, metrics, last_update, state, tuple(rows))


def evaluate_agent(
    params: PolicyParams,
    tasks: list[Task],
    env: WebEnvironment | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> EvaluationReport:
    """Greedy-decoded success rate, one real episode per task, overall and per site kind."""
    env = env if env is not None else WebEnvironment()
    if not tasks:
        return EvaluationReport(0.0, {}, 0)
    outcomes: dict[str, list[int]] = {}
    rewards = []
    for task in tasks:
        trajectory = rollout_real(env, task, params, max_steps, np.random.default_rng(0), temperature=0.0)
        rewards.append(trajectory.return_value)
        outcomes.setdefault(task.site_kind, []).append(trajectory.return_value)
    per_kind = {kind: float(np.mean(values)) for kind, values in sorted(outcomes.items())}
    return EvaluationReport(float(np.mean(rewards)), per_kind, len(tasks))


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def _sparse(vector: np.ndarray | None) -> dict[str, float] | None:
    if vector is None:
        return None
    return {str(int(index)): float(vector[index]) for index in np.flatnonzero(vector)}


def _dense(weights: dict[str, float] | None, dim: int) -> np.ndarray | None:
    if weights is None:
        return None
    vector = np.zeros(dim, dtype=np.float64)
    for index, value in weights.items():
        vector[int(index)] = float(value)
    return vector


def checkpoint_to_json(checkpoint: TrainingCheckpoint) -> dict[str, Any]:
    state = checkpoint.optimizer
    return {
        "format_version": TRAINING_CHECKPOINT_VERSION,
        "config_hash": checkpoint.config_hash,
        "updates": checkpoint.updates,
        "optimizer": {
            "params": params_to_json(state.params),
            "old_params": params_to_json(state.old_params),
            "learning_rate": state.learning_rate,
            "clip_epsilon": state.clip_epsilon,
            "momentum": state.momentum,
            "refresh_interval": state.refresh_interval,
            "step_count": state.step_count,
            "velocity": _sparse(state.velocity),
        },
        "metrics": list(checkpoint.metrics),
    }


def checkpoint_from_json(data: dict[str, Any], source: str = "<memory>") -> TrainingCheckpoint:
    if data.get("format_version") != TRAINING_CHECKPOINT_VERSION:
        raise ArtifactError(source, f"unsupported checkpoint format {data.get('format_version')!r}")
    try:
        optimizer = data["optimizer"]
        params = params_from_json(optimizer["params"], source)
        state = OptimizerState(
            params=params,
            old_params=params_from_json(optimizer["old_params"], source),
            learning_rate=float(optimizer["learning_rate"]),
            clip_epsilon=float(optimizer["clip_epsilon"]),
            momentum=float(optimizer["momentum"]),
            refresh_interval=int(optimizer["refresh_interval"]),
            step_count=int(optimizer["step_count"]),
            velocity=_dense(optimizer.get("velocity"), params.dim),
        )
        return TrainingCheckpoint(str(data["config_hash"]), int(data["updates"]), state, tuple(data["metrics"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(source, f"malformed checkpoint: {exc}") from exc


def save_checkpoint(checkpoint: TrainingCheckpoint, out_dir: str | Path) -> Path:
    target = Path(out_dir) / CHECKPOINT_FILE
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(checkpoint_to_json(checkpoint), sort_keys=True), encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(str(target), str(exc)) from exc
    logger.debug("Wrote checkpoint at update %s to %s", checkpoint.updates, target)
    return target


def load_checkpoint(out_dir: str | Path) -> TrainingCheckpoint:
    source = Path(out_dir) / CHECKPOINT_FILE
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(str(source), str(exc)) from exc
    return checkpoint_from_json(data, str(source))


def write_metrics(metrics: pd.DataFrame, path: str | Path) -> None:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        metrics.to_csv(target, index=False, columns=list(METRICS_COLUMNS), lineterminator="\n")
    except OSError as exc:
        raise ArtifactError(str(target), str(exc)) from exc


def _write_json(payload: dict[str, Any], path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(str(path), str(exc)) from exc


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def load_world_model(config: TrainConfig) -> WorldModel | None:
    if config.mode == "real" or config.wm_path is None:
        return None
    wm = load_wm(config.wm_path)
    if config.hallucination_rate is not None:
        wm = wm.with_hallucination_rate(config.hallucination_rate)
    return wm


def run_training(
    config: TrainConfig,
    db: DbService | None = None,
    resume: bool = False,
    wm: TransitionModel | None = None,
    tasks: list[Task] | None = None,
) -> RunSummary:
    """Load artifacts, warm-start, train, evaluate on held-out tasks and write every output file.

    `wm` and `tasks` replace what the config points at, which ablation sweeps use.
    """
    out_dir = Path(config.out_dir)
    tasks = tasks if tasks is not None else read_tasks(config.tasks_path)
    if wm is None:
        wm = load_world_model(config)
    train_tasks, eval_tasks = split_tasks(tasks, config.eval_fraction, config.seed)
    store = ExpertStore.from_tasks(train_tasks)
    env = WebEnvironment()
    eval_env = WebEnvironment()

    initial = warm_start(
        PolicyParams.zeros(config.feature_dim), store, {task.task_id for task in train_tasks}, config
    )
    initial_report = evaluate_agent(initial, eval_tasks, eval_env, config.max_steps)
    checkpoint = load_checkpoint(out_dir) if resume and (out_dir / CHECKPOINT_FILE).exists() else None

    run_id = db.start_run(config.to_json(), config.fingerprint(), str(out_dir)) if db is not None else None
    try:
        result = train(
            config, train_tasks, wm, env, store, checkpoint=checkpoint, initial_params=initial, out_dir=out_dir
        )
    except Exception:
        if db is not None and run_id is not None:
            db.finish_run(run_id, 0, None, status="failed")
        raise

    report = evaluate_agent(result.params, eval_tasks, eval_env, config.max_steps)
    save_checkpoint(TrainingCheckpoint(config.fingerprint(), result.updates, result.optimizer, result.rows), out_dir)
    save_policy(result.params, out_dir / POLICY_FILE)
    write_metrics(result.metrics, out_dir / METRICS_FILE)
    summary = RunSummary(
        out_dir=str(out_dir),
        updates=result.updates,
        initial_success_rate=initial_report.success_rate,
        final_success_rate=report.success_rate,
        per_kind=report.per_kind,
        run_id=run_id,
    )
    _write_json(summary.to_json(), out_dir / SUMMARY_FILE)
    if db is not None and run_id is not None:
        db.finish_run(run_id, result.updates, report.success_rate)
    logger.info(
        "Training finished after %s updates (real steps %s): success %.3f -> %.3f",
        result.updates,
        env.step_count,
        initial_report.success_rate,
        report.success_rate,
    )
    return summary
