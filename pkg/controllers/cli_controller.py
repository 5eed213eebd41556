import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Callable, Sequence

from config import Config
from config_manager import ConfigError, ConfigManager
from constants import (
    DEFAULT_MAX_STEPS,
    DEFAULT_SITE_BRANCHING,
    DEFAULT_SITE_PAGES,
    DEFAULT_WM_ALPHA,
    SITE_KINDS,
)
from services import ablation_service, corpus_service, rollout_service, task_service, training_service, world_model
from services.db_service import DbService
from services.policy import PolicyParams, load_policy
from services.web_env import WebEnvironment
from utils.errors import DreamdeskError
from utils.tree_fuzz import fuzz_diff

logger = logging.getLogger(__name__)

DREAM_LENGTHS = "1..10"
FIDELITY_LENGTHS = "1,4,10"
REAL_FRACTIONS = "0,0.2,0.4,0.6,0.8,1.0"


def _emit(payload: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True, default=str) + "\n")


def parse_int_range(text: str) -> list[int]:
    """`1..10` (inclusive) or a comma-separated list of integers."""
    if ".." in text:
        low, high = text.split("..", 1)
        return list(range(int(low), int(high) + 1))
    return [int(item) for item in text.split(",") if item.strip()]


def parse_float_list(text: str) -> list[float]:
    return [float(item) for item in text.split(",") if item.strip()]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_tasks(args: argparse.Namespace) -> None:
    kinds = [kind.strip() for kind in args.kinds.split(",") if kind.strip()]
    tasks = task_service.generate_tasks(args.seed, args.n, kinds, args.pages, args.branching, args.sites_per_kind)
    task_service.write_tasks(tasks, args.out)
    witnesses = sum(len(task.witnesses) for task in tasks)
    _emit({"tasks": len(tasks), "witnesses": witnesses, "out": args.out})


def cmd_collect_corpus(args: argparse.Namespace) -> None:
    tasks = task_service.read_tasks(args.tasks)
    corpus = corpus_service.collect_corpus(WebEnvironment(), tasks, args.n, args.seed, args.explore)
    corpus_service.write_corpus(corpus, args.out)
    _emit({"transitions": len(corpus.transitions), "actions": corpus_service.action_type_histogram(corpus)})


def cmd_clean_corpus(args: argparse.Namespace) -> None:
    reports = [corpus_service.load_clean_corpus(path) for path in args.input]
    if len(reports) == 1:
        corpus = reports[0].corpus
    else:
        corpus = corpus_service.merge_corpora(report.corpus for report in reports)
    corpus_service.write_corpus(corpus, args.out)
    dropped: Counter[str] = Counter()
    for report in reports:
        dropped.update(report.drop_counts)
    _emit({"kept": len(corpus.transitions), "dropped": dict(dropped), "inputs": len(reports)})


def cmd_train_wm(args: argparse.Namespace) -> None:
    if not args.alpha > 0:
        raise ConfigError("alpha", "must be positive")
    corpus = corpus_service.load_clean_corpus(args.corpus).corpus
    if args.heldout_out:
        corpus, heldout = corpus_service.split_corpus(corpus, args.heldout_fraction, args.seed)
        corpus_service.write_corpus(heldout, args.heldout_out)
    wm = world_model.train_wm(corpus, args.alpha, args.seed, args.hallucination_rate)
    world_model.save_wm(wm, args.out)
    _emit({"transitions": len(corpus.transitions), "fine_keys": len(wm.fine), "coarse_keys": len(wm.coarse)})


def cmd_eval_wm(args: argparse.Namespace) -> None:
    heldout = corpus_service.load_clean_corpus(args.corpus).corpus
    if args.frozen_prior:
        wm = world_model.frozen_prior_wm(args.hallucination_rate or 0.0)
    else:
        if not args.wm:
            raise ConfigError("wm", "is required unless --frozen-prior is given")
        wm = world_model.load_wm(args.wm)
        if args.hallucination_rate is not None:
            wm = wm.with_hallucination_rate(args.hallucination_rate)
    _emit(world_model.eval_wm(wm, heldout))


def cmd_train_agent(args: argparse.Namespace) -> None:
    config = ConfigManager().load(args.config)
    db = DbService() if args.registry else None
    summary = training_service.run_training(config, db=db, resume=args.resume)
    _emit(summary.to_json())


def cmd_evaluate_agent(args: argparse.Namespace) -> None:
    params = load_policy(args.policy)
    tasks = task_service.read_tasks(args.tasks)
    report = training_service.evaluate_agent(params, tasks, WebEnvironment(), args.max_steps)
    _emit(report.to_json())


def cmd_ablate(args: argparse.Namespace) -> None:
    base = ConfigManager().load(args.config)
    if args.sweep == "dream-length":
        values: list[Any] = parse_int_range(args.lengths)
    elif args.sweep == "real-fraction":
        values = parse_float_list(args.fracs)
    else:
        values = list(ablation_service.WM_VARIANTS)
    seeds = list(range(args.seeds))
    out_csv = args.out or str(Path(base.out_dir) / f"ablation-{args.sweep}.csv")
    db = DbService() if args.registry else None
    frame = ablation_service.run_ablation(args.sweep, base, values, seeds, out_csv, db, args.workers)
    summary = ablation_service.summarize(frame)
    _emit({"out": out_csv, "cells": len(frame), "summary": summary.to_dict("records")})


def cmd_dream_fidelity(args: argparse.Namespace) -> None:
    wm = world_model.load_wm(args.wm)
    if args.hallucination_rate is not None:
        wm = wm.with_hallucination_rate(args.hallucination_rate)
    store = task_service.ExpertStore.from_tasks(task_service.read_tasks(args.tasks))
    params = load_policy(args.policy) if args.policy else PolicyParams.zeros()
    lengths = [
        rollout_service.dream_fidelity(wm, store, params, length, args.n, args.seed).to_json()
        for length in parse_int_range(args.lengths)
    ]
    _emit({"lengths": lengths})


def cmd_runs(args: argparse.Namespace) -> None:
    _emit({"runs": DbService().list_runs(args.status)})


def cmd_cells(args: argparse.Namespace) -> None:
    _emit({"sweep": args.sweep, "cells": DbService().get_cells(args.sweep)})


def cmd_fuzz_diff(args: argparse.Namespace) -> None:
    report = fuzz_diff(args.n, args.seed)
    _emit({key: value for key, value in report.to_json().items() if key != "failures"} | {"failed": report.n - report.passed})


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dreamdesk", description="Imagination-based training of web agents.")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-tasks", help="Generate tasks with verified witnesses.")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n", type=int, default=20)
    gen.add_argument("--kinds", default=",".join(SITE_KINDS))
    gen.add_argument("--pages", type=int, default=DEFAULT_SITE_PAGES)
    gen.add_argument("--branching", type=int, default=DEFAULT_SITE_BRANCHING)
    gen.add_argument("--sites-per-kind", type=int, default=1)
    gen.add_argument("--out", required=True)
    gen.set_defaults(handler=cmd_gen_tasks)

    collect = commands.add_parser("collect-corpus", help="Collect real transitions for world-model training.")
    collect.add_argument("--tasks", required=True)
    collect.add_argument("--n", type=int, default=2000)
    collect.add_argument("--seed", type=int, default=0)
    collect.add_argument("--explore", type=float, default=0.5)
    collect.add_argument("--out", required=True)
    collect.set_defaults(handler=cmd_collect_corpus)

    clean = commands.add_parser("clean-corpus", help="Drop unusable corpus records.")
    clean.add_argument(
        "--in", dest="input", nargs="+", required=True, help="One or more raw corpora; several are merged."
    )
    clean.add_argument("--out", required=True)
    clean.set_defaults(handler=cmd_clean_corpus)

    train_wm = commands.add_parser("train-wm", help="Fit the world model on a corpus.")
    train_wm.add_argument("--corpus", required=True)
    train_wm.add_argument("--alpha", type=float, default=DEFAULT_WM_ALPHA)
    train_wm.add_argument("--seed", type=int, default=0)
    train_wm.add_argument("--hallucination-rate", type=float, default=0.0)
    train_wm.add_argument("--heldout-out", help="Hold out part of the corpus and write it here.")
    train_wm.add_argument("--heldout-fraction", type=float, default=0.2)
    train_wm.add_argument("--out", required=True)
    train_wm.set_defaults(handler=cmd_train_wm)

    eval_wm = commands.add_parser("eval-wm", help="Score a world model on held-out transitions.")
    eval_wm.add_argument("--wm")
    eval_wm.add_argument("--corpus", required=True)
    eval_wm.add_argument("--frozen-prior", action="store_true")
    eval_wm.add_argument("--hallucination-rate", type=float)
    eval_wm.set_defaults(handler=cmd_eval_wm)

    train_agent = commands.add_parser("train-agent", help="Train a policy from a JSON config.")
    train_agent.add_argument("--config", required=True)
    train_agent.add_argument("--resume", action="store_true")
    train_agent.add_argument("--registry", action="store_true", help="Record the run in the run registry.")
    train_agent.set_defaults(handler=cmd_train_agent)

    evaluate = commands.add_parser("evaluate-agent", help="Greedy success rate of a saved policy.")
    evaluate.add_argument("--policy", required=True)
    evaluate.add_argument("--tasks", required=True)
    evaluate.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    evaluate.set_defaults(handler=cmd_evaluate_agent)

    ablate = commands.add_parser("ablate", help="Run an ablation sweep.")
    ablate.add_argument("sweep", choices=ablation_service.SWEEPS)
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--lengths", default=DREAM_LENGTHS)
    ablate.add_argument("--fracs", default=REAL_FRACTIONS)
    ablate.add_argument("--seeds", type=int, default=5)
    ablate.add_argument("--workers", type=int, default=Config.WORKERS)
    ablate.add_argument("--registry", action="store_true", help="Skip cells already in the run registry.")
    ablate.add_argument("--out")
    ablate.set_defaults(handler=cmd_ablate)

    fidelity = commands.add_parser(
        "dream-fidelity", help="Compare dreams with the same actions replayed on the real site."
    )
    fidelity.add_argument("--wm", required=True)
    fidelity.add_argument("--tasks", required=True)
    fidelity.add_argument("--policy", help="Saved policy; an untrained one otherwise.")
    fidelity.add_argument("--lengths", default=FIDELITY_LENGTHS)
    fidelity.add_argument("--n", type=int, default=200)
    fidelity.add_argument("--seed", type=int, default=0)
    fidelity.add_argument("--hallucination-rate", type=float)
    fidelity.set_defaults(handler=cmd_dream_fidelity)

    runs = commands.add_parser("runs", help="List training runs in the run registry.")
    runs.add_argument("--status", choices=("running", "finished", "failed"))
    runs.set_defaults(handler=cmd_runs)

    cells = commands.add_parser("cells", help="List recorded ablation cells of one sweep.")
    cells.add_argument("sweep", choices=ablation_service.SWEEPS)
    cells.set_defaults(handler=cmd_cells)

    fuzz = commands.add_parser("fuzz-diff", help="Round-trip random trees through diff and apply.")
    fuzz.add_argument("--n", type=int, default=10_000)
    fuzz.add_argument("--seed", type=int, default=0)
    fuzz.set_defaults(handler=cmd_fuzz_diff)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        Config.validate()
    except ValueError as exc:
        sys.stderr.write(json.dumps({"error": "ConfigError", "message": str(exc)}) + "\n")
        return 1
    logging.basicConfig(level=Config.log_level(), stream=sys.stderr)

    handler: Callable[[argparse.Namespace], None] = args.handler
    try:
        handler(args)
    except DreamdeskError as exc:
        logger.debug("Command %s failed", args.command, exc_info=True)
        sys.stderr.write(json.dumps(exc.to_payload(), default=str) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0
