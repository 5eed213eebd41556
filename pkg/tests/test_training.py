import dataclasses
import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from config_manager import TrainConfig
from constants import METRICS_COLUMNS
from services.db_service import DbService
from services.policy import PolicyParams, load_policy
from services.task_service import ExpertStore
from services.training_service import (
    CHECKPOINT_FILE,
    METRICS_FILE,
    POLICY_FILE,
    SUMMARY_FILE,
    TrainingCheckpoint,
    epoch_count,
    evaluate_agent,
    load_checkpoint,
    run_training,
    save_checkpoint,
    split_tasks,
    train,
    write_metrics,
)
from services.web_env import WebEnvironment
from utils.errors import ArtifactError

DIM = 2**10


@pytest.fixture
def config(tmp_path):
    return TrainConfig(
        tasks_path=str(tmp_path / "tasks.jsonl"),
        wm_path=str(tmp_path / "wm.json"),
        group_size=2,
        max_steps=3,
        max_dream=2,
        max_updates=3,
        feature_dim=DIM,
        out_dir=str(tmp_path / "run"),
    )


def _train(config, tasks, wm, **kwargs):
    return train(config, tasks, wm, WebEnvironment(), ExpertStore.from_tasks(tasks), **kwargs)


class TestSplitTasks:
    def test_held_out_share(self, tasks):
        train_tasks, eval_tasks = split_tasks(tasks, 0.25, seed=0)
        assert (len(train_tasks), len(eval_tasks)) == (4, 2)
        assert not {t.task_id for t in train_tasks} & {t.task_id for t in eval_tasks}

    def test_no_held_out_share_reuses_training_tasks(self, tasks):
        train_tasks, eval_tasks = split_tasks(tasks, 0.0, seed=0)
        assert train_tasks == eval_tasks == list(tasks)

    def test_is_seeded(self, tasks):
        assert split_tasks(tasks, 0.5, seed=4) == split_tasks(tasks, 0.5, seed=4)


# ---------------------------------------------------------------------------
# Update loop
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    ("n_tasks", "epochs", "max_updates", "expected"),
    [(15, 10, None, 10), (15, 10, 200, 14), (6, 1, 10, 2), (20, 10, 5, 10), (15, 10, 150, 10)],
)
def test_epoch_count(n_tasks, epochs, max_updates, expected):
    assert epoch_count(n_tasks, epochs, max_updates) == expected


class TestTrain:
    def test_stops_at_max_updates(self, config, tasks, wm):
        result = _train(config, tasks, wm)
        assert result.updates == 3
        assert result.params.version == 3
        assert list(result.metrics.columns) == list(METRICS_COLUMNS)
        assert list(result.metrics["update"]) == [0, 1, 2]
        assert (result.metrics["wallclock_ms"] == 0).all()

    def test_budget_outlasts_the_configured_epochs(self, config, tasks, wm):
        result = _train(dataclasses.replace(config, epochs=1, max_updates=10), tasks, wm)
        assert result.updates == 10
        assert list(result.metrics["update"]) == list(range(10))

    def test_needs_tasks(self, config, wm):
        with pytest.raises(ArtifactError):
            train(config, [], wm, WebEnvironment(), ExpertStore([], {}))

    def test_resumed_run_matches_an_uninterrupted_one(self, config, tasks, wm):
        full = _train(config, tasks, wm)
        partial = _train(dataclasses.replace(config, max_updates=1), tasks, wm)
        checkpoint = TrainingCheckpoint(config.fingerprint(), partial.updates, partial.optimizer, partial.rows)

        resumed = _train(config, tasks, wm, checkpoint=checkpoint)

        assert resumed.updates == 3
        assert resumed.rows == full.rows
        np.testing.assert_array_equal(resumed.params.theta, full.params.theta)

    def test_checkpoint_from_another_config(self, config, tasks, wm):
        partial = _train(dataclasses.replace(config, max_updates=1), tasks, wm)
        checkpoint = TrainingCheckpoint(config.fingerprint(), partial.updates, partial.optimizer, partial.rows)
        with pytest.raises(ArtifactError, match="different config"):
            _train(dataclasses.replace(config, seed=5), tasks, wm, checkpoint=checkpoint)

    def test_writes_periodic_checkpoints(self, config, tasks, wm, tmp_path):
        _train(dataclasses.replace(config, checkpoint_every=2), tasks, wm, out_dir=tmp_path)
        assert load_checkpoint(tmp_path).updates == 2


class TestCheckpointFiles:
    def test_round_trip(self, config, tasks, wm, tmp_path):
        result = _train(config, tasks, wm)
        save_checkpoint(TrainingCheckpoint("abc", result.updates, result.optimizer, result.rows), tmp_path)
        loaded = load_checkpoint(tmp_path)
        assert loaded.config_hash == "abc"
        assert loaded.updates == 3
        assert loaded.metrics == result.rows
        assert loaded.optimizer.step_count == result.optimizer.step_count
        np.testing.assert_array_equal(loaded.optimizer.params.theta, result.params.theta)

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(ArtifactError):
            load_checkpoint(tmp_path)

    def test_unknown_format(self, tmp_path):
        (tmp_path / CHECKPOINT_FILE).write_text(json.dumps({"format_version": 42}), encoding="utf-8")
        with pytest.raises(ArtifactError, match="unsupported checkpoint format"):
            load_checkpoint(tmp_path)


def test_metrics_csv_columns(config, tasks, wm, tmp_path):
    result = _train(config, tasks, wm)
    write_metrics(result.metrics, tmp_path / "metrics.csv")
    frame = pd.read_csv(tmp_path / "metrics.csv")
    assert list(frame.columns) == list(METRICS_COLUMNS)
    assert len(frame) == 3


# ---------------------------------------------------------------------------
# Evaluation and orchestration
# ---------------------------------------------------------------------------


class TestEvaluateAgent:
    def test_reports_every_site_kind(self, tasks):
        report = evaluate_agent(PolicyParams.zeros(DIM), tasks, max_steps=3)
        assert report.n == len(tasks)
        assert set(report.per_kind) == {"forum", "shop", "wiki"}
        assert 0.0 <= report.success_rate <= 1.0

    def test_no_tasks(self):
        report = evaluate_agent(PolicyParams.zeros(DIM), [])
        assert report.to_json() == {"success_rate": 0.0, "per_kind": {}, "n": 0}


class TestRunTraining:
    def test_writes_every_output(self, config, tasks, wm):
        summary = run_training(config, wm=wm, tasks=tasks)
        out_dir = Path(config.out_dir)
        for name in (CHECKPOINT_FILE, POLICY_FILE, METRICS_FILE, SUMMARY_FILE):
            assert (out_dir / name).exists(), name
        assert summary.updates == 3
        assert summary.run_id is None
        assert load_policy(out_dir / POLICY_FILE).version == 3
        written = json.loads((out_dir / SUMMARY_FILE).read_text(encoding="utf-8"))
        assert written["updates"] == 3

    def test_resuming_a_finished_run_adds_no_updates(self, config, tasks, wm):
        run_training(config, wm=wm, tasks=tasks)
        again = run_training(config, wm=wm, tasks=tasks, resume=True)
        assert again.updates == 3
        assert len(pd.read_csv(f"{config.out_dir}/{METRICS_FILE}")) == 3

    def test_registers_the_run(self, config, tasks, wm, tmp_path):
        db = DbService(f"sqlite:///{tmp_path}/registry.db")
        summary = run_training(config, db=db, wm=wm, tasks=tasks)
        run = db.get_run(summary.run_id)
        assert run["status"] == "finished"
        assert run["updates"] == 3
        assert run["config_hash"] == config.fingerprint()
        assert run["final_success_rate"] == summary.final_success_rate

    def test_identical_runs_write_identical_metrics(self, config, tasks, wm, tmp_path):
        first = dataclasses.replace(config, out_dir=str(tmp_path / "first"))
        second = dataclasses.replace(config, out_dir=str(tmp_path / "second"))
        run_training(first, wm=wm, tasks=tasks)
        run_training(second, wm=wm, tasks=tasks)
        written = (tmp_path / "first" / METRICS_FILE).read_bytes()
        assert written == (tmp_path / "second" / METRICS_FILE).read_bytes()
        assert len(written.splitlines()) == 4


@pytest.mark.slow
def test_training_raises_held_out_success(shop_suite, tmp_path):
    tasks, wm = shop_suite
    gains = []
    for seed in range(5):
        config = TrainConfig(
            tasks_path="shop.jsonl",
            wm_path="wm.json",
            seed=seed,
            max_updates=200,
            out_dir=str(tmp_path / f"seed{seed}"),
        )
        summary = run_training(config, wm=wm, tasks=tasks)
        assert summary.updates == 200
        gains.append(summary.final_success_rate - summary.initial_success_rate)
    assert np.mean(gains) >= 0.1
