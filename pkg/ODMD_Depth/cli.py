"""Batch command line: generate datasets, run solvers, train and evaluate DBox.

Exit codes: 0 ok, 2 input error, 3 numeric abort, 4 version or compatibility error.
"""

import argparse
import logging
import os
import sys
import time
from typing import List, Optional

from dotenv import load_dotenv

load_dotenv()

from utils import setup_logging
from odmd_app.benchmark import BenchmarkSet, build_benchmark_set, build_method, evaluate
from odmd_app.checkpoint import save_checkpoint
from odmd_app.config import GenerationConfig, TrainConfig, default_threads
from odmd_app.errors import InputError, OdmdError
from odmd_app.handlers import ModelHandler, PresetHandler, UserInterface
from odmd_app.serialization import (read_config, read_dataset, write_dataset, write_plotdata, write_report,
                                    write_train_log)
from odmd_app.trainer import train

logger = logging.getLogger("odmd_cli")

METHOD_CHOICES = ["box-ls", "expansion-2obs", "parallax-2obs"]
DATASET_SUFFIXES = (".odmd.jsonl", ".odmd.bin")
LONG_RUN_ITERATIONS = 1_000_000


def _check_output(path: str, suffixes=None):
    if suffixes and not path.endswith(suffixes):
        raise InputError(f"output path must end in one of {suffixes}: {path}")
    directory = os.path.dirname(os.path.abspath(path))
    if os.path.exists(directory) and not os.access(directory, os.W_OK):
        raise InputError(f"output directory is not writable: {directory}")


def _check_inputs(paths: List[str]):
    for path in paths:
        if not os.path.isfile(path):
            raise InputError(f"file not found: {path}")


def _write_outputs(report, out_dir: str, ui: UserInterface):
    os.makedirs(out_dir, exist_ok=True)
    write_report(os.path.join(out_dir, "report.json"), report)
    write_plotdata(os.path.join(out_dir, "plotdata.csv"), report)
    ui.show_report(report)


def cmd_generate(args, presets: PresetHandler, ui: UserInterface) -> int:
    _check_output(args.output, DATASET_SUFFIXES)
    if args.config:
        cfg = read_config(args.config)
        if not isinstance(cfg, GenerationConfig):
            raise InputError(f"{args.config} holds a training config; generate needs a generation config")
        name = cfg.name
        seed = args.seed if args.seed is not None else cfg.seed
        count = args.count or 3000
    else:
        cfg = presets.generation_config(args.preset)
        name = args.preset
        seed = args.seed if args.seed is not None else presets.split_seed(args.preset, args.split)
        count = args.count or presets.split_size(args.preset, args.split)

    begin = time.perf_counter()
    bset = build_benchmark_set(cfg, name, args.split, seed, count, args.threads)
    elapsed = time.perf_counter() - begin
    write_dataset(args.output, bset)
    ui.show_message(f"Generated {count} examples of {name} (seed {seed}) in {elapsed:.2f}s "
                    f"({count / max(elapsed, 1e-9):,.0f} examples/s) -> {args.output}")
    return 0


def cmd_solve(args, presets: PresetHandler, ui: UserInterface) -> int:
    _check_inputs(args.datasets)
    sets = [read_dataset(path) for path in args.datasets]
    methods = args.method or ["box-ls"]
    reports = []
    for name in methods:
        method = build_method(name, ensemble_trials=args.ensemble, seed=args.ensemble_seed)
        report = evaluate(method, sets, args.threads)
        out_dir = args.out_dir if len(methods) == 1 else os.path.join(args.out_dir, name)
        _write_outputs(report, out_dir, ui)
        reports.append(report)
    if len(reports) > 1:
        ui.show_comparison(reports)
    return 0


def cmd_train(args, presets: PresetHandler, ui: UserInterface) -> int:
    _check_output(args.output)
    if args.config:
        cfg = read_config(args.config)
        if not isinstance(cfg, TrainConfig):
            raise InputError(f"{args.config} holds a generation config; train needs a training config")
    else:
        cfg = presets.training_config(args.preset)
    if args.seed is not None:
        cfg = TrainConfig.from_dict({**cfg.model_dump(), "seed": args.seed})
    log_path = args.log or f"{args.output}.log.jsonl"
    _check_output(log_path)

    if cfg.iterations >= LONG_RUN_ITERATIONS:
        ui.show_warning(f"{cfg.name} runs {cfg.iterations:,} iterations; full-scale training takes days on CPU. "
                        f"Use a -desk preset for a local run.")
    ui.show_section(f"Training {cfg.name} ({cfg.loss_mode}, {cfg.iterations} iterations, batch {cfg.batch_size})")
    validation = presets.validation_sets(cfg, args.threads)
    result = train(cfg, validation, args.threads)
    save_checkpoint(args.output, result.params, result.metadata)
    write_train_log(log_path, result.log)
    ui.show_key_values("Training result", {
        "best iteration": result.best_iteration,
        "best validation error (%)": result.best_val_error,
        "checkpoint": args.output,
        "log": log_path,
    })
    return 0


def cmd_eval(args, presets: PresetHandler, ui: UserInterface) -> int:
    _check_inputs([args.checkpoint] + args.datasets)
    if not args.datasets and not args.preset:
        raise InputError("eval needs dataset files or --preset names")
    handler = ModelHandler(args.checkpoint)
    handler.load()
    sets: List[BenchmarkSet] = [read_dataset(path) for path in args.datasets]
    sets += [presets.benchmark_set(name, args.split, args.size, args.threads) for name in args.preset or []]
    for bset in sets[1:]:
        if bset.examples.n != sets[0].examples.n:
            raise InputError(f"set {bset.name} has n={bset.examples.n}, {sets[0].name} has n={sets[0].examples.n}")
    method = handler.get_method(sets[0].examples.n, zero_lateral=args.z_only,
                                ensemble_trials=args.ensemble, seed=args.ensemble_seed)
    report = evaluate(method, sets, args.threads)
    _write_outputs(report, args.out_dir, ui)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odmd", description="Object depth from camera motion and bounding boxes")
    parser.add_argument("--log-level", default=None, help="Log level (default LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    def threads_flag(p):
        p.add_argument("--threads", type=int, default=None,
                       help="Worker threads (default ODMD_THREADS or the CPU count); results do not depend on it")

    gen = sub.add_parser("generate", help="Generate a benchmark dataset")
    source = gen.add_mutually_exclusive_group()
    source.add_argument("--preset", default="normal", help="Benchmark preset name")
    source.add_argument("--config", help="GenerationConfig JSON file")
    gen.add_argument("--count", type=int, default=None, help="Examples to generate (default: preset split size)")
    gen.add_argument("--seed", type=int, default=None, help="Stream family seed (default: preset split seed)")
    gen.add_argument("--split", choices=["validation", "test"], default="test", help="Preset split")
    gen.add_argument("-o", "--output", required=True, help="Output .odmd.jsonl or .odmd.bin path")
    threads_flag(gen)
    gen.set_defaults(handler=cmd_generate)

    solve = sub.add_parser("solve", help="Evaluate analytical solvers on datasets")
    solve.add_argument("datasets", nargs="+", help="Dataset files")
    solve.add_argument("--method", action="append", choices=METHOD_CHOICES,
                       help="Solver, repeatable (default box-ls)")
    solve.add_argument("--ensemble", type=int, default=1, help="Median over this many random subsets")
    solve.add_argument("--ensemble-seed", type=int, default=0, help="Seed of the ensemble subsets")
    solve.add_argument("--out-dir", default=".", help="Directory for report.json and plotdata.csv")
    threads_flag(solve)
    solve.set_defaults(handler=cmd_solve)

    tr = sub.add_parser("train", help="Train a DBox network")
    source = tr.add_mutually_exclusive_group()
    source.add_argument("--preset", default="dbox-ns-z", help="Training preset name")
    source.add_argument("--config", help="TrainConfig JSON file")
    tr.add_argument("--seed", type=int, default=None, help="Override the training seed")
    tr.add_argument("-o", "--output", required=True, help="Best checkpoint path")
    tr.add_argument("--log", default=None, help="Training log path (default <output>.log.jsonl)")
    threads_flag(tr)
    tr.set_defaults(handler=cmd_train)

    ev = sub.add_parser("eval", help="Evaluate a DBox checkpoint")
    ev.add_argument("checkpoint", help="Checkpoint file")
    ev.add_argument("datasets", nargs="*", help="Dataset files")
    ev.add_argument("--preset", action="append", help="Regenerate a benchmark preset split, repeatable")
    ev.add_argument("--split", choices=["validation", "test"], default="test", help="Split for --preset sets")
    ev.add_argument("--size", type=int, default=None, help="Examples per --preset set (default: split size)")
    ev.add_argument("--z-only", action="store_true", help="Zero lateral camera inputs before prediction")
    ev.add_argument("--ensemble", type=int, default=1, help="Median over this many random subsets")
    ev.add_argument("--ensemble-seed", type=int, default=0, help="Seed of the ensemble subsets")
    ev.add_argument("--out-dir", default=".", help="Directory for report.json and plotdata.csv")
    threads_flag(ev)
    ev.set_defaults(handler=cmd_eval)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging("odmd_cli", level=args.log_level)
    if args.threads is None:
        args.threads = default_threads()
    if args.threads < 1:
        args.threads = 1
    ui = UserInterface()
    try:
        return args.handler(args, PresetHandler(), ui)
    except OdmdError as e:
        ui.show_error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        ui.show_error(f"I/O error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
