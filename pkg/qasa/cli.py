"""Command line interface: ``qasa generate|train|eval|compare|bench``.

Exit codes: 0 on success, 1 if a run of ``compare`` failed, 2 for usage and configuration
errors, 3 if training was aborted because of a non-finite loss.
"""
import argparse
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from ._variants import SCALES, VARIANTS
from .autodiff import Tape, Tensor
from .checkpoint import Checkpoint
from .config import ExperimentConfig, preset
from .data import TASK_NAMES, SeriesSpec, generate, make_datasets, series_frame, write_csv
from .errors import ConfigurationError, NumericalAbort, QasaError
from .metrics import mse_loss
from .model import Model, instantiate_config
from .train import TrainResult, evaluate, train, write_metrics_csv

__all__ = ["main", "run_experiment", "compare", "bench"]

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED_RUN, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3

# names used by the comparison table
MODEL_ALIASES: Dict[str, str] = {
    "classical": "qasa_classical",
    "quantum": "qasa",
    "transformer": "transformer",
    "qasa_classical": "qasa_classical",
    "qasa": "qasa",
}

COMPARE_COLUMNS = ["task", "model", "mae_mean", "mse_mean", "mae_std", "mse_std", "status"]

BENCH_COLUMNS = ["seq_len", "variant", "median_ms", "trials"]


def worker_threads() -> int:
    """Number of worker threads allowed by the `QASA_THREADS` environment variable."""
    raw = os.environ.get("QASA_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError:
        threads = 0
    if threads < 1:
        raise ConfigurationError(f"QASA_THREADS must be a positive integer, got '{raw}'.")
    return threads


def run_experiment(config: ExperimentConfig, out_dir: Optional[Path] = None) -> TrainResult:
    """Generate the data of `config`, train, and optionally write the run's files.

    With `out_dir`, the directory receives ``config.json``, ``checkpoint.qasa``,
    ``metrics.csv`` and ``predictions.csv``.
    """
    config.validate()
    train_set, val_set, _ = make_datasets(
        config.data.series_spec(), config.data.window, config.data.train_ratio
    )
    result = train(Model(config.model), (train_set, val_set), config.train)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        config.save(out_dir / "config.json")
        result.checkpoint.save(out_dir / "checkpoint.qasa")
        write_metrics_csv(result.history, out_dir / "metrics.csv")
        write_csv(result.predictions, out_dir / "predictions.csv")
        logger.info("Wrote run files to %s", out_dir)
    return result


def cmd_generate(args) -> int:
    spec = SeriesSpec(task=args.task, length=args.length, dt=args.dt, seed=args.seed)
    series = generate(spec)
    write_csv(series_frame(series, spec.dt), args.out)
    print(pd.Series(series, name=spec.task).describe().to_string())
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    if args.config is not None:
        config = ExperimentConfig.load(args.config)
    else:
        config = preset(args.variant, args.scale, args.task, args.seed)
    if getattr(args, "out_dir", None) is not None:
        config.output_dir = str(args.out_dir)
    return config


def cmd_train(args) -> int:
    config = _experiment_config(args)
    result = run_experiment(config, Path(config.output_dir))
    info = result.checkpoint.info
    print(
        f"best epoch {info['epoch']}: val_mse={info['val_mse']:.6f} val_mae={info['val_mae']:.6f}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _experiment_config(args)
    checkpoint = Checkpoint.load(args.checkpoint)
    if checkpoint.config.seq_len != config.data.window:
        raise ConfigurationError(
            f"The checkpoint expects windows of length {checkpoint.config.seq_len}, "
            f"the configuration produces {config.data.window}.",
            field="data.window",
        )
    _, val_set, stats = make_datasets(
        config.data.series_spec(), config.data.window, config.data.train_ratio
    )
    mse, mae = evaluate(checkpoint.to_model(), val_set, stats if args.raw_units else None)
    print(f"mse={mse:.6f} mae={mae:.6f}")
    return EXIT_OK


def _run_cell(cell: Dict[str, Any]) -> Dict[str, Any]:
    logger.info("Starting %s / %s / seed %d", cell["task"], cell["model"], cell["seed"])
    try:
        result = run_experiment(cell["config"])
    except Exception:
        logger.exception("Run %s / %s / seed %d failed", cell["task"], cell["model"], cell["seed"])
        return {**cell, "mse": math.nan, "mae": math.nan, "ok": False}
    info = result.checkpoint.info
    logger.info(
        "Finished %s / %s / seed %d: val_mse=%.6f", cell["task"], cell["model"], cell["seed"], info["val_mse"]
    )
    return {**cell, "mse": info["val_mse"], "mae": info.get("val_mae", math.nan), "ok": True}


def compare(
    tasks: Sequence[str],
    models: Sequence[str],
    seeds: Sequence[int],
    scale: str = "desk",
    train_overrides: Optional[Dict[str, Any]] = None,
    threads: int = 1,
) -> pd.DataFrame:
    """Train every (task, model, seed) combination and aggregate over the seeds.

    Parameters
    ----------
    tasks : list of str
        Task names, see :data:`~qasa.data.TASK_NAMES`.

    models : list of str
        Model names: ``"classical"`` (QASA_classical), ``"quantum"`` (QASA), or a variant
        name.

    seeds : list of int
        At least two seeds.

    scale : str, default "desk"
        Hyperparameter preset.

    train_overrides : dict, optional
        Overrides of the preset's :class:`~qasa.train.TrainConfig`.

    threads : int, default 1
        Worker threads. The result does not depend on it.

    Returns
    -------
    pd.DataFrame
        One row per (task, model) with the columns of :data:`COMPARE_COLUMNS`. Means and
        sample standard deviations (``N - 1`` denominator) are over the seeds; a
        combination with a failed run has status ``"failed"`` and NaN metrics.
    """
    if not tasks or not models:
        raise ConfigurationError("compare needs at least one task and one model.")
    if len(seeds) < 2:
        raise ConfigurationError(
            f"compare needs at least two seeds to estimate a standard deviation, got {len(seeds)}."
        )
    for model in models:
        if model not in MODEL_ALIASES:
            raise ConfigurationError(
                f"Unknown model '{model}'. Available options: {', '.join(MODEL_ALIASES)}."
            )

    cells = [
        {
            "task": task,
            "model": model,
            "seed": seed,
            "config": preset(MODEL_ALIASES[model], scale, task, seed, train_overrides=train_overrides),
        }
        for task in tasks
        for model in models
        for seed in seeds
    ]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map keeps the order of `cells`
        results = list(pool.map(_run_cell, cells))

    runs = pd.DataFrame(
        [{key: r[key] for key in ("task", "model", "seed", "mse", "mae", "ok")} for r in results]
    )
    rows = []
    for (task, model), group in runs.groupby(["task", "model"], sort=False):
        ok = bool(group["ok"].all())
        rows.append(
            {
                "task": task,
                "model": model,
                "mae_mean": group["mae"].mean() if ok else math.nan,
                "mse_mean": group["mse"].mean() if ok else math.nan,
                "mae_std": group["mae"].std(ddof=1) if ok else math.nan,
                "mse_std": group["mse"].std(ddof=1) if ok else math.nan,
                "status": "ok" if ok else "failed",
            }
        )
    return pd.DataFrame(rows, columns=COMPARE_COLUMNS)


def markdown_table(table: pd.DataFrame) -> str:
    """The comparison table with the columns Task, Model, MAE, MSE, MAE Std, MSE Std."""
    lines = [
        "| Task | Model | MAE | MSE | MAE Std | MSE Std |",
        "|---|---|---|---|---|---|",
    ]
    for row in table.itertuples(index=False):
        values = " | ".join(
            f"{value:.6f}" for value in (row.mae_mean, row.mse_mean, row.mae_std, row.mse_std)
        )
        lines.append(f"| {row.task} | {row.model} | {values} |")
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    overrides = {"record_wall_time": False}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.lr is not None:
        overrides["lr"] = args.lr
    table = compare(
        args.tasks,
        args.models,
        args.seeds,
        scale="full" if args.full_scale else args.scale,
        train_overrides=overrides,
        threads=worker_threads(),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(table, out.with_suffix(".csv"))
    markdown = markdown_table(table)
    out.with_suffix(".md").write_text(markdown, encoding="utf-8")
    print(markdown, end="")
    failed = int((table["status"] != "ok").sum())
    if failed:
        logger.error("%d of %d comparisons contain failed runs.", failed, len(table))
        return EXIT_FAILED_RUN
    return EXIT_OK


def bench(
    seq_lens: Sequence[int], variant: str = "qasa", repeats: int = 5, scale: str = "desk"
) -> pd.DataFrame:
    """Median wall-clock time of one forward and backward pass per window length.

    Returns
    -------
    pd.DataFrame
        One row per entry of `seq_lens` with the columns of :data:`BENCH_COLUMNS`.
    """
    if not seq_lens or any(L < 1 for L in seq_lens) or list(seq_lens) != sorted(set(seq_lens)):
        raise ConfigurationError(
            f"seq_lens must be positive and strictly ascending, got {list(seq_lens)}.",
            field="seq_lens",
        )
    if repeats < 1:
        raise ConfigurationError(f"repeats must be positive, got {repeats}.", field="repeats")

    rng = np.random.default_rng(0)
    rows = []
    for seq_len in seq_lens:
        model = Model(instantiate_config(variant, scale, seq_len=seq_len))
        window = rng.normal(size=(1, seq_len, 1))
        tensors = list(model.parameters.values())
        timings = []
        for _ in range(repeats):
            started = time.perf_counter()
            with Tape() as tape:
                loss = mse_loss(model(Tensor(window)), np.zeros(1))
            tape.gradient(loss, tensors)
            timings.append((time.perf_counter() - started) * 1000.0)
        rows.append([seq_len, variant, float(np.median(timings)), repeats])
        logger.debug("seq_len=%d: %s ms", seq_len, timings)
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def cmd_bench(args) -> int:
    table = bench(args.seq_lens, args.variant, args.repeats, args.scale)
    if args.out is not None:
        write_csv(table, args.out)
    print(table.to_csv(index=False, lineterminator="\n"), end="")
    return EXIT_OK


def _add_run_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="experiment configuration (JSON)")
    parser.add_argument("--variant", default="qasa", help=f"one of {', '.join(VARIANTS)} (without --config)")
    parser.add_argument("--scale", default="desk", help=f"one of {', '.join(SCALES)} (without --config)")
    parser.add_argument("--task", default="damped_oscillator", help="task (without --config)")
    parser.add_argument("--seed", type=int, default=42, help="seed (without --config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qasa", description="Hybrid quantum-classical transformers for time-series forecasting."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    generate_parser = commands.add_parser("generate", help="write a synthetic series as CSV")
    generate_parser.add_argument("--task", default="damped_oscillator", help=f"one of {', '.join(TASK_NAMES)}")
    generate_parser.add_argument("--length", type=int, default=2050)
    generate_parser.add_argument("--dt", type=float, default=0.1)
    generate_parser.add_argument("--seed", type=int, default=42)
    generate_parser.add_argument("--out", type=Path, required=True)
    generate_parser.set_defaults(handler=cmd_generate)

    train_parser = commands.add_parser("train", help="train one model")
    _add_run_arguments(train_parser)
    train_parser.add_argument("--out-dir", type=Path, help="overrides output_dir of the configuration")
    train_parser.set_defaults(handler=cmd_train)

    eval_parser = commands.add_parser("eval", help="evaluate a checkpoint on the validation split")
    _add_run_arguments(eval_parser)
    eval_parser.add_argument("--checkpoint", type=Path, required=True)
    eval_parser.add_argument("--raw-units", action="store_true", help="report metrics in series units")
    eval_parser.set_defaults(handler=cmd_eval)

    compare_parser = commands.add_parser("compare", help="multi-task, multi-seed comparison")
    compare_parser.add_argument("--tasks", nargs="+", default=list(TASK_NAMES))
    compare_parser.add_argument("--models", nargs="+", default=["classical", "quantum"])
    compare_parser.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    compare_parser.add_argument("--scale", default="desk")
    compare_parser.add_argument("--full-scale", action="store_true", help="use the full-scale preset")
    compare_parser.add_argument("--epochs", type=int, help="overrides the preset's epochs")
    compare_parser.add_argument("--lr", type=float, help="overrides the preset's learning rate")
    compare_parser.add_argument("--out", type=Path, required=True, help="output path; .csv and .md are written")
    compare_parser.set_defaults(handler=cmd_compare)

    bench_parser = commands.add_parser("bench", help="time a forward and backward pass")
    bench_parser.add_argument("--seq-lens", nargs="+", type=int, required=True)
    bench_parser.add_argument("--variant", default="qasa")
    bench_parser.add_argument("--scale", default="desk")
    bench_parser.add_argument("--repeats", type=int, default=5)
    bench_parser.add_argument("--out", type=Path)
    bench_parser.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )

    try:
        return args.handler(args)
    except NumericalAbort as e:
        logger.error("%s", e)
        return EXIT_NUMERICAL
    except (QasaError, OSError) as e:
        print(f"qasa {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
