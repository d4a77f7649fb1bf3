"""Command-line surface: generate | run | ablate | plotdata.

Exit codes are a stable contract for scripting: 0 success, 2 config error,
3 I/O error, 4 runtime numeric error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .acquisition import STRATEGY_NAMES
from .alcore import (
    ALConfig,
    delta_gap,
    hardest_examples_probe,
    partial_inference_probe,
    record_rows,
    results_header,
    run_al,
    run_full_supervision,
    train_initial_model,
    write_results_csv,
)
from .config import ConfigError, ExperimentConfig, load_config
from .data import DatasetError, generate_dataset, load_dataset, save_dataset
from .numerics import NonFiniteError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _al_config(cfg: ExperimentConfig, seed: int, normalize: bool = True) -> ALConfig:
    return ALConfig(
        initial_fully_labelled=cfg.al.initial_fully_labelled,
        iterations=cfg.al.iterations,
        budget_per_iteration=cfg.al.budget_per_iteration,
        mc_passes=cfg.al.mc_passes,
        seed=seed,
        normalize=normalize,
        train=replace(cfg.train, seed=seed),
        net=cfg.net,
    )


def _reference_task(args):
    dataset_path, cfg, seed = args
    bundle = load_dataset(dataset_path)
    result = run_full_supervision(bundle, replace(cfg.train, seed=seed), cfg.net)
    return seed, result.report


def _run_task(args):
    dataset_path, cfg, strategy, seed, reference, normalize = args
    bundle = load_dataset(dataset_path)
    record = run_al(bundle, strategy, _al_config(cfg, seed, normalize), reference)
    gaps = delta_gap(record, reference) if reference is not None else None
    return record, gaps


def _map_tasks(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _default_jobs(args) -> int:
    if args.jobs is not None:
        return args.jobs
    env = os.environ.get("PARTAL_LAB_JOBS", "")
    return int(env) if env.isdigit() and int(env) > 0 else 1


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    out = args.out if args.out else cfg.dataset_path
    bundle = generate_dataset(cfg.dataset, cfg.dataset_seed)
    manifest_path, blob_path = save_dataset(bundle, out)
    mods = ", ".join(f"{m.name}({m.metric})" for m in bundle.modalities)
    print(f"wrote {manifest_path} + {blob_path}")
    print(f"train={len(bundle.train)} test={len(bundle.test)} "
          f"geometry={bundle.H}x{bundle.W} modalities: {mods}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    strategies = tuple(args.strategy) if args.strategy else cfg.al.strategies
    for s in strategies:
        if s not in STRATEGY_NAMES:
            raise ConfigError(f"unknown strategy {s!r}; valid: {', '.join(STRATEGY_NAMES)}")
    seeds = tuple(args.seed) if args.seed else cfg.al.seeds
    jobs = _default_jobs(args)

    bundle = load_dataset(cfg.dataset_path)  # also validates the file pair
    out_dir = Path(cfg.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)

    refs = dict(_map_tasks(_reference_task,
                           [(cfg.dataset_path, cfg, seed) for seed in seeds], jobs))
    tasks = [(cfg.dataset_path, cfg, strategy, seed, refs[seed], True)
             for strategy in strategies for seed in seeds]
    results = _map_tasks(_run_task, tasks, jobs)

    records, gaps = [], {}
    for record, gap in results:
        records.append(record)
        gaps[(record.strategy, record.seed)] = gap
        path = out_dir / f"{record.strategy}_seed{record.seed}.csv"
        write_results_csv(path, [record], bundle.modalities,
                          {(record.strategy, record.seed): gap})
    merged = out_dir / "merged.csv"
    write_results_csv(merged, records, bundle.modalities, gaps)
    if cfg.output.emit_plot_data:
        _write_long_format(merged, out_dir / "merged_long.csv")

    for record in sorted(records, key=lambda r: (r.strategy, r.seed)):
        final = record.final
        print(f"{record.strategy} seed={record.seed} labels={final.labels_used} "
              f"delta_mtl={final.delta_mtl:+.4f}")
    print(f"wrote {merged}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    bundle = load_dataset(cfg.dataset_path)
    out_dir = Path(cfg.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = _default_jobs(args)

    if args.mode == "hardest":
        path = out_dir / "ablation_hardest.csv"
        budget = cfg.al.initial_fully_labelled * bundle.num_modalities
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "strategy", "modality", "metric", "value"])
            for seed in cfg.al.seeds:
                state, net, root = train_initial_model(bundle, _al_config(cfg, seed))
                probe = hardest_examples_probe(
                    net, bundle, state, list(cfg.al.strategies), budget,
                    cfg.al.mc_passes, root.split(7))
                for strategy, per_mod in probe.items():
                    for m in bundle.modalities:
                        value = per_mod.get(m.name)
                        writer.writerow([seed, strategy, m.name, m.metric,
                                         "" if value is None else repr(value)])
        print(f"wrote {path}")
        return EXIT_OK

    if args.mode == "inference":
        path = out_dir / "ablation_inference.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "subset_size", "provided", "target", "metric", "value"])
            for seed in cfg.al.seeds:
                result = run_full_supervision(bundle, replace(cfg.train, seed=seed), cfg.net)
                for subset, target, value in partial_inference_probe(result.net, bundle):
                    spec = next(m for m in bundle.modalities if m.name == target)
                    writer.writerow([seed, len(subset), "+".join(subset) or "-",
                                     target, spec.metric, repr(value)])
        print(f"wrote {path}")
        return EXIT_OK

    if args.mode == "normalization":
        path = out_dir / "ablation_normalization.csv"
        refs = dict(_map_tasks(_reference_task,
                               [(cfg.dataset_path, cfg, seed) for seed in cfg.al.seeds],
                               jobs))
        tasks = [(cfg.dataset_path, cfg, "partal", seed, refs[seed], normalize)
                 for seed in cfg.al.seeds for normalize in (True, False)]
        results = _map_tasks(_run_task, tasks, jobs)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant"] + results_header(bundle.modalities, with_gaps=False))
            for (record, _), task in zip(results, tasks):
                variant = "normalized" if task[5] else "raw"
                for row in record_rows(record, bundle.modalities, with_gaps=False):
                    writer.writerow([variant] + row)
        print(f"wrote {path}")
        return EXIT_OK

    raise ConfigError(f"unknown ablation mode {args.mode!r}")


def _write_long_format(results_path: Path, out_path: Path) -> None:
    with open(results_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{results_path}: empty results file") from None
        key_cols = ["iteration", "labels_used", "strategy", "seed"]
        if header[: len(key_cols)] != key_cols:
            raise DatasetError(f"{results_path}: line 1: unexpected header {header[:4]}")
        metric_cols = header[len(key_cols):]
        with open(out_path, "w", newline="") as out:
            writer = csv.writer(out)
            writer.writerow(["strategy", "seed", "iteration", "labels_used",
                             "metric", "value"])
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise DatasetError(
                        f"{results_path}: line {lineno}: expected {len(header)} "
                        f"columns, got {len(row)}")
                iteration, labels_used, strategy, seed = row[: len(key_cols)]
                for name, value in zip(metric_cols, row[len(key_cols):]):
                    writer.writerow([strategy, seed, iteration, labels_used, name, value])


def cmd_plotdata(args) -> int:
    results = Path(args.results)
    out = Path(args.out) if args.out else results.parent / f"{results.stem}_long.csv"
    _write_long_format(results, out)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partal-lab",
        description="Multi-task active learning with partial labels, desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate and save a synthetic dataset")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", help="dataset path prefix (default: config dataset path)")
    gen.set_defaults(fn=cmd_generate)

    run = sub.add_parser("run", help="run AL strategies and write result CSVs")
    run.add_argument("--config", required=True)
    run.add_argument("--strategy", nargs="+", metavar="NAME")
    run.add_argument("--seed", nargs="+", type=int, metavar="N")
    run.add_argument("--jobs", type=int, default=None,
                     help="parallel runs (default: $PARTAL_LAB_JOBS or 1)")
    run.set_defaults(fn=cmd_run)

    abl = sub.add_parser("ablate", help="run one of the ablation studies")
    abl.add_argument("--config", required=True)
    abl.add_argument("--mode", required=True,
                     choices=["hardest", "inference", "normalization"])
    abl.add_argument("--jobs", type=int, default=None)
    abl.set_defaults(fn=cmd_ablate)

    plot = sub.add_parser("plotdata", help="reshape a results CSV to long format")
    plot.add_argument("--results", required=True)
    plot.add_argument("--out")
    plot.set_defaults(fn=cmd_plotdata)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DatasetError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonFiniteError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
