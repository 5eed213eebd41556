"""
Ablation sweeps: each cell is a full training run with one parameter changed.

Sweeps: dream length, share of expert trajectories in each group, and trained versus frozen-prior
world model. Completed cells are recorded in the run registry and skipped when a sweep is re-run.
"""

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Sequence

import pandas as pd

from config_manager import ConfigError, TrainConfig
from constants import ABLATION_COLUMNS, ABLATION_HALLUCINATION_RATE
from services.db_service import DbService
from services.training_service import run_training
from services.world_model import frozen_prior_wm
from utils.errors import ArtifactError

logger = logging.getLogger(__name__)

SWEEPS = ("dream-length", "real-fraction", "wm-training")
WM_VARIANTS = ("trained", "frozen")


def format_param(value: Any) -> str:
    return format(value, "g") if isinstance(value, (int, float)) and not isinstance(value, bool) else str(value)


def cell_config(sweep: str, base: TrainConfig, value: Any, seed: int, out_root: str | Path) -> TrainConfig:
    """The train-agent config for one sweep cell."""
    out_dir = str(Path(out_root) / sweep / f"{format_param(value)}-seed{seed}")
    if sweep == "dream-length":
        rate = base.hallucination_rate if base.hallucination_rate is not None else ABLATION_HALLUCINATION_RATE
        return dataclasses.replace(base, max_dream=int(value), hallucination_rate=rate, seed=seed, out_dir=out_dir)
    if sweep == "real-fraction":
        return dataclasses.replace(base, rho_expert=float(value), seed=seed, out_dir=out_dir)
    if sweep == "wm-training":
        if value not in WM_VARIANTS:
            raise ConfigError("wm-training", f"unknown world model variant {value!r}")
        return dataclasses.replace(base, seed=seed, out_dir=out_dir)
    raise ConfigError("sweep", f"must be one of {', '.join(SWEEPS)}")


def run_cell(sweep: str, config: TrainConfig, value: Any) -> float:
    wm = None
    if sweep == "wm-training" and value == "frozen":
        rate = config.hallucination_rate if config.hallucination_rate is not None else 0.0
        wm = frozen_prior_wm(rate)
    return run_training(config, wm=wm).final_success_rate


def run_ablation(
    sweep: str,
    base: TrainConfig,
    values: Sequence[Any],
    seeds: Sequence[int],
    out_csv: str | Path,
    db: DbService | None = None,
    workers: int = 1,
    out_root: str | Path | None = None,
) -> pd.DataFrame:
    """Run every (value, seed) cell not already recorded and write the tidy CSV."""
    if sweep not in SWEEPS:
        raise ConfigError("sweep", f"must be one of {', '.join(SWEEPS)}")
    needs_trained_wm = sweep != "wm-training" or "trained" in values
    if needs_trained_wm and base.mode != "real" and not base.wm_path:
        raise ConfigError("wm_path", "is required for imagined rollouts")
    out_root = out_root if out_root is not None else base.out_dir
    base_hash = base.fingerprint()
    done = db.completed_cells(sweep, base_hash) if db is not None else {}

    cells = [(value, seed) for value in values for seed in seeds]
    results: dict[tuple[str, int], float] = {}
    pending = []
    for value, seed in cells:
        key = (format_param(value), seed)
        if key in done:
            results[key] = done[key]
        else:
            pending.append((value, seed, cell_config(sweep, base, value, seed, out_root)))
    if len(pending) < len(cells):
        logger.info("Skipping %s completed %s cells", len(cells) - len(pending), sweep)

    def record(value: Any, seed: int, rate: float) -> None:
        key = (format_param(value), seed)
        results[key] = rate
        if db is not None:
            db.record_cell(sweep, key[0], seed, base_hash, rate)
        logger.info("Ablation %s param=%s seed=%s success=%.3f", sweep, key[0], seed, rate)

    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(run_cell, sweep, config, value): (value, seed) for value, seed, config in pending
            }
            for future in as_completed(futures):
                value, seed = futures[future]
                record(value, seed, future.result())
    else:
        for value, seed, config in pending:
            record(value, seed, run_cell(sweep, config, value))

    rows = [
        {"param": format_param(value), "seed": seed, "final_success_rate": results[(format_param(value), seed)]}
        for value, seed in cells
    ]
    frame = pd.DataFrame(rows, columns=list(ABLATION_COLUMNS))
    target = Path(out_csv)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(target, index=False, lineterminator="\n")
    except OSError as exc:
        raise ArtifactError(str(target), str(exc)) from exc
    return frame


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean and spread of final success per swept value, in sweep order."""
    grouped = frame.groupby("param", sort=False)["final_success_rate"]
    return grouped.agg(["mean", "std", "count"]).reset_index()
