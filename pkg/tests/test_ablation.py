import pandas as pd
import pytest

from config_manager import ConfigError, TrainConfig
from constants import ABLATION_COLUMNS, ABLATION_HALLUCINATION_RATE
from services import ablation_service
from services.ablation_service import cell_config, format_param, run_ablation, summarize
from services.db_service import DbService
from services.task_service import write_tasks
from services.world_model import save_wm


@pytest.fixture
def base(tmp_path):
    return TrainConfig(tasks_path="tasks.jsonl", wm_path="wm.json", out_dir=str(tmp_path / "runs"))


@pytest.fixture
def calls(monkeypatch):
    seen = []

    def fake_run_cell(sweep, config, value):
        seen.append((sweep, config, value))
        return config.seed / 10

    monkeypatch.setattr(ablation_service, "run_cell", fake_run_cell)
    return seen


class TestCellConfig:
    def test_dream_length(self, base, tmp_path):
        config = cell_config("dream-length", base, 3, seed=2, out_root=tmp_path)
        assert config.max_dream == 3
        assert config.seed == 2
        assert config.hallucination_rate == ABLATION_HALLUCINATION_RATE
        assert config.out_dir == str(tmp_path / "dream-length" / "3-seed2")

    def test_real_fraction(self, base, tmp_path):
        config = cell_config("real-fraction", base, 0.4, seed=0, out_root=tmp_path)
        assert config.rho_expert == 0.4
        assert config.out_dir.endswith("0.4-seed0")

    def test_world_model_variant(self, base, tmp_path):
        assert cell_config("wm-training", base, "frozen", 1, tmp_path).wm_path == base.wm_path
        with pytest.raises(ConfigError):
            cell_config("wm-training", base, "tiny", 1, tmp_path)


@pytest.mark.parametrize(("value", "expected"), [(1, "1"), (0.2, "0.2"), (1.0, "1"), ("frozen", "frozen")])
def test_format_param(value, expected):
    assert format_param(value) == expected


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


class TestRunAblation:
    def test_runs_every_cell(self, base, calls, tmp_path):
        frame = run_ablation("dream-length", base, [1, 2], [0, 1], tmp_path / "out.csv")
        assert list(frame.columns) == list(ABLATION_COLUMNS)
        assert list(frame["param"]) == ["1", "1", "2", "2"]
        assert list(frame["final_success_rate"]) == [0.0, 0.1, 0.0, 0.1]
        assert len(calls) == 4
        written = pd.read_csv(tmp_path / "out.csv", dtype={"param": str})
        assert list(written.columns) == list(ABLATION_COLUMNS)

    def test_registry_skips_completed_cells(self, base, calls, tmp_path):
        db = DbService(f"sqlite:///{tmp_path}/registry.db")
        run_ablation("real-fraction", base, [0.0, 0.5], [0], tmp_path / "first.csv", db=db)
        assert len(calls) == 2

        frame = run_ablation("real-fraction", base, [0.0, 0.5, 1.0], [0], tmp_path / "second.csv", db=db)

        assert len(calls) == 3
        assert calls[-1][2] == 1.0
        assert list(frame["param"]) == ["0", "0.5", "1"]

    def test_changed_base_config_reruns_cells(self, base, calls, tmp_path):
        db = DbService(f"sqlite:///{tmp_path}/registry.db")
        run_ablation("real-fraction", base, [0.5], [0], tmp_path / "a.csv", db=db)
        changed = TrainConfig(tasks_path="tasks.jsonl", wm_path="wm.json", out_dir=base.out_dir, learning_rate=0.25)
        run_ablation("real-fraction", changed, [0.5], [0], tmp_path / "b.csv", db=db)
        assert len(calls) == 2

    def test_unknown_sweep(self, base, tmp_path):
        with pytest.raises(ConfigError):
            run_ablation("batch-size", base, [1], [0], tmp_path / "out.csv")

    def test_trained_model_needs_a_path(self, tmp_path, calls):
        base = TrainConfig(tasks_path="tasks.jsonl", out_dir=str(tmp_path))
        with pytest.raises(ConfigError):
            run_ablation("dream-length", base, [1], [0], tmp_path / "out.csv")
        frame = run_ablation("wm-training", base, ["frozen"], [0], tmp_path / "out.csv")
        assert list(frame["param"]) == ["frozen"]


def test_summarize_keeps_sweep_order():
    frame = pd.DataFrame(
        {"param": ["2", "2", "1", "1"], "seed": [0, 1, 0, 1], "final_success_rate": [0.5, 1.0, 0.0, 0.0]}
    )
    summary = summarize(frame)
    assert list(summary["param"]) == ["2", "1"]
    assert list(summary["mean"]) == [0.75, 0.0]
    assert list(summary["count"]) == [2, 2]


@pytest.mark.slow
def test_expert_share_curve(shop_suite, tmp_path):
    tasks, wm = shop_suite
    write_tasks(tasks, tmp_path / "tasks.jsonl")
    save_wm(wm, tmp_path / "wm.json")
    base = TrainConfig(
        tasks_path=str(tmp_path / "tasks.jsonl"),
        wm_path=str(tmp_path / "wm.json"),
        max_updates=200,
        out_dir=str(tmp_path / "runs"),
    )

    frame = run_ablation("real-fraction", base, [0.0, 0.4, 1.0], range(5), tmp_path / "fractions.csv")

    means = summarize(frame).set_index("param")["mean"]
    assert means["0.4"] - means["0"] >= 0.05
    assert means["1"] - means["0.4"] <= 0.02
