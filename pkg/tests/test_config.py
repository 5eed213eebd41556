import json
import logging
from pathlib import Path

import pytest

from config import Config
from config_manager import ConfigError, ConfigManager, TrainConfig
from constants import DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE, DEFAULT_MAX_DREAM, DEFAULT_RHO_EXPERT

SHIPPED_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "train.json"


@pytest.fixture
def manager():
    return ConfigManager()


@pytest.fixture
def minimal():
    return {"tasks_path": "tasks.jsonl", "wm_path": "wm.json"}


class TestConfigManager:
    def test_defaults(self, manager, minimal):
        config = manager.validate(minimal)
        assert config.mode == "imagined"
        assert config.group_size == 8
        assert config.max_updates is None

    def test_ints_are_accepted_for_floats(self, manager, minimal):
        config = manager.validate(minimal | {"learning_rate": 1, "top_p": 1})
        assert isinstance(config.learning_rate, float)
        assert config.top_p == 1.0

    def test_real_mode_needs_no_world_model(self, manager):
        assert manager.validate({"tasks_path": "t.jsonl", "mode": "real"}).wm_path is None

    @pytest.mark.parametrize(
        ("overrides", "key_path"),
        [
            ({"learning_rte": 0.1}, "learning_rte"),
            ({"group_size": True}, "group_size"),
            ({"group_size": "8"}, "group_size"),
            ({"seed": 1.5}, "seed"),
            ({"mode": "offline"}, "mode"),
            ({"wm_path": None}, "wm_path"),
            ({"group_size": 1}, "group_size"),
            ({"top_p": 0}, "top_p"),
            ({"rho_expert": 1.2}, "rho_expert"),
            ({"eval_fraction": 1.0}, "eval_fraction"),
            ({"hallucination_rate": -0.5}, "hallucination_rate"),
            ({"max_updates": 0}, "max_updates"),
            ({"exact_expert_count": 1}, "exact_expert_count"),
            ({"epochs": None}, "epochs"),
        ],
    )
    def test_rejects(self, manager, minimal, overrides, key_path):
        with pytest.raises(ConfigError) as excinfo:
            manager.validate(minimal | overrides)
        assert excinfo.value.key_path == key_path
        assert excinfo.value.to_payload()["key_path"] == key_path

    def test_tasks_path_is_required(self, manager):
        with pytest.raises(ConfigError, match="tasks_path: is required"):
            manager.validate({"mode": "real"})

    def test_rejects_non_objects(self, manager):
        with pytest.raises(ConfigError) as excinfo:
            manager.validate(["tasks.jsonl"])
        assert excinfo.value.key_path == "$"

    def test_load(self, manager, minimal, tmp_path):
        path = tmp_path / "train.json"
        path.write_text(json.dumps(minimal | {"seed": 3}), encoding="utf-8")
        assert manager.load(path).seed == 3

    def test_shipped_config_uses_the_defaults(self, manager):
        config = manager.load(SHIPPED_CONFIG)
        assert config.warmstart_steps == 0
        assert config.learning_rate == DEFAULT_LEARNING_RATE
        assert config.epochs == DEFAULT_EPOCHS
        assert config.max_dream == DEFAULT_MAX_DREAM
        assert config.rho_expert == DEFAULT_RHO_EXPERT
        assert config.max_updates == 200

    def test_load_errors(self, manager, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            manager.load(tmp_path / "absent.json")
        broken = tmp_path / "broken.json"
        broken.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="not valid JSON"):
            manager.load(broken)


class TestFingerprint:
    def test_ignores_the_output_directory(self):
        first = TrainConfig(tasks_path="t.jsonl", out_dir="runs/a")
        second = TrainConfig(tasks_path="t.jsonl", out_dir="runs/b")
        assert first.fingerprint() == second.fingerprint()

    def test_tracks_every_other_setting(self):
        assert TrainConfig(tasks_path="t.jsonl").fingerprint() != TrainConfig(tasks_path="t.jsonl", seed=1).fingerprint()


# ---------------------------------------------------------------------------
# Environment settings
# ---------------------------------------------------------------------------


class TestEnvironmentConfig:
    def test_defaults_validate(self):
        Config.validate()

    def test_rejects_unknown_log_level(self, monkeypatch):
        monkeypatch.setattr(Config, "LOG_LEVEL", "LOUD")
        with pytest.raises(ValueError, match="LOG_LEVEL"):
            Config.validate()

    def test_rejects_non_positive_workers(self, monkeypatch):
        monkeypatch.setattr(Config, "WORKERS", 0)
        with pytest.raises(ValueError, match="WORKERS"):
            Config.validate()

    def test_log_level(self, monkeypatch):
        monkeypatch.setattr(Config, "LOG_LEVEL", "DEBUG")
        assert Config.log_level() == logging.DEBUG
