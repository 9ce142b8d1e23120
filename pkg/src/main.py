"""
Safe-set quantification toolkit.

Command-line front end for quantifying, validating and summarizing almost safe
sets of car-following controllers, and for running the concrete-scenario
battery against them.
"""

import argparse
import glob
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import yaml
from dotenv import load_dotenv
from pydantic import ValidationError
from pythonjsonlogger import jsonlogger
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeRemainingColumn
from rich.table import Table

from analyzer import load_battery, ncap_battery, pass_counts, slice_grid, summarize, summarize_dumps
from exceptions import ConfigError, SafeSetError
from grid import CoveringGrid
from models import (
    BatteryOutcome,
    ExitReason,
    LoggingSection,
    RunConfigFile,
    RunLogEntry,
    SafeSetResult,
    ValidationReport,
)
from quantifier import quantify, validate
from result_store import ResultStore
from simulator import Trajectory
from vehicles import build_model
from version import __version__

console = Console()
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION_FAILED = 3
EXIT_IO = 4
EXIT_INTERRUPTED = 130

# Sections that do not influence results; left out of the echo so dumps stay reproducible
_ECHO_EXCLUDE = {"seeds", "output", "execution", "logging"}


def setup_logging(log_config: LoggingSection) -> None:
    """
    Setup logging configuration.

    LOG_LEVEL from the environment (or a .env file) overrides the configured level.

    Parameters:
        log_config (LoggingSection): Logging section of the run configuration.
    """
    load_dotenv()
    level_name = os.getenv("LOG_LEVEL", log_config.level).upper()
    level = getattr(logging, level_name, logging.INFO)

    handlers: List[logging.Handler] = []

    # JSON lines file handler (if log file is specified)
    if log_config.file:
        file_handler = logging.FileHandler(log_config.file, encoding="utf-8")
        file_handler.setFormatter(
            jsonlogger.JsonFormatter("%(asctime)s %(name)s %(levelname)s %(message)s")
        )
        handlers.append(file_handler)

    # Console handler with Rich
    if log_config.console:
        handlers.append(RichHandler(console=console, rich_tracebacks=True))

    logging.basicConfig(level=level, handlers=handlers, format="%(message)s", force=True)


def load_config(config_path: str) -> RunConfigFile:
    """
    Load and validate the run configuration.

    Parameters:
        config_path (str): Path to the YAML configuration file.

    Returns:
        RunConfigFile: Validated configuration.

    Raises:
        ConfigError: Missing file, YAML syntax error or schema violation.
    """
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except FileNotFoundError as e:
        raise ConfigError(
            f"configuration file not found: {config_path} "
            "(create one based on config.yaml.example)"
        ) from e
    except yaml.YAMLError as e:
        raise ConfigError(f"error parsing configuration file: {e}") from e

    try:
        return RunConfigFile.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration {config_path}:\n{e}") from e


def apply_overrides(run_config: RunConfigFile, args: argparse.Namespace) -> RunConfigFile:
    """Apply --seed / --out / --warm-start / --trace and re-validate."""
    data = run_config.model_dump(mode="json")
    if getattr(args, "seed", None):
        data["seeds"] = args.seed
    if getattr(args, "out", None):
        data["output"]["directory"] = args.out
    if getattr(args, "warm_start", None):
        data["initialization"] = args.warm_start
    if getattr(args, "trace", False):
        data["output"]["trace"] = True
    try:
        return RunConfigFile.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid command-line override:\n{e}") from e


def config_echo(run_config: RunConfigFile) -> Dict:
    return run_config.model_dump(mode="json", exclude=_ECHO_EXCLUDE)


def make_progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
        TimeRemainingColumn(),
        console=console,
    )


# --- quantify -------------------------------------------------------------------------


def quantify_seed(
    run_config: RunConfigFile,
    seed: int,
    warm_grid: Optional[CoveringGrid],
    store: ResultStore,
) -> SafeSetResult:
    """
    Quantify one seed and write its dump, run log and (optionally) traces.

    Parameters:
        run_config (RunConfigFile): Effective configuration.
        seed (int): Seed of this quantification.
        warm_grid (Optional[CoveringGrid]): Warm-start set, or None for the full space.
        store (ResultStore): Output store.

    Returns:
        SafeSetResult: Quantification result.
    """
    model = build_model(run_config.model, np.random.default_rng([seed, 1]))
    entries: List[RunLogEntry] = []

    def save_trace(index: int, trajectory: Trajectory) -> None:
        store.save_trace(trajectory, seed, index)

    on_trajectory: Optional[Callable[[int, Trajectory], None]] = (
        save_trace if run_config.output.trace else None
    )
    result = quantify(
        run_config.quant_config(seed),
        model,
        initial_grid=warm_grid,
        on_run=entries.append,
        on_trajectory=on_trajectory,
    )
    initialization = run_config.initialization
    if initialization != "full":
        initialization = Path(initialization).stem
    store.save_result(result, initialization=initialization)
    store.save_run_log(entries, seed)
    return result


def display_results(results: List[SafeSetResult]) -> None:
    """Print one row per seed and, for several seeds, the batch statistics."""
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Seed", justify="right", style="cyan")
    table.add_column("Exit", style="yellow")
    table.add_column("Runs", justify="right")
    table.add_column("Collisions", justify="right")
    table.add_column("Active cells", justify="right")
    table.add_column("Expansions", justify="right")

    for result in sorted(results, key=lambda r: r.seed):
        style = "green" if result.exit_reason == ExitReason.VALIDATED else "red"
        table.add_row(
            str(result.seed),
            f"[{style}]{result.exit_reason.value}[/{style}]",
            str(result.total_runs),
            str(result.collision_runs),
            str(result.grid.active_count),
            str(result.expansions),
        )
    console.print(table)

    if len(results) > 1:
        record = summarize(results)
        console.print(
            f"[cyan]runs {record.scenario_runs_mean:.1f} ± {record.scenario_runs_std:.1f}, "
            f"collisions {record.collision_runs_mean:.1f} ± {record.collision_runs_std:.1f}, "
            f"IoU {record.iou:.3f}[/cyan]"
        )


def cmd_quantify(args: argparse.Namespace) -> int:
    run_config = apply_overrides(load_config(args.config), args)
    setup_logging(run_config.logging)

    warm_grid = None
    warm_path = run_config.initialization_path()
    if warm_path is not None:
        warm_grid = ResultStore.load_grid(warm_path)
        console.print(f"[cyan]Warm start from {warm_path} ({warm_grid.active_count} cells)[/cyan]")

    store = ResultStore(run_config.output.directory, config_echo(run_config))
    seeds = run_config.seeds
    console.print(
        f"\n[bold cyan]Quantifying {run_config.model.name} over {len(seeds)} seed(s)..."
        "[/bold cyan]\n"
    )

    results: List[SafeSetResult] = []
    with make_progress() as progress:
        task = progress.add_task("Quantifying...", total=len(seeds))
        if run_config.execution.parallel and len(seeds) > 1:
            with ThreadPoolExecutor(max_workers=run_config.execution.max_workers) as executor:
                futures = {
                    executor.submit(quantify_seed, run_config, seed, warm_grid, store): seed
                    for seed in seeds
                }
                for future in as_completed(futures):
                    results.append(future.result())
                    progress.update(task, advance=1)
        else:
            for seed in seeds:
                progress.update(task, description=f"Seed {seed}...")
                results.append(quantify_seed(run_config, seed, warm_grid, store))
                progress.update(task, advance=1)

    display_results(results)
    console.print(f"\n[bold green]✓ Results saved to {store.output_dir}[/bold green]\n")
    return EXIT_OK


# --- validate -------------------------------------------------------------------------


def display_report(report: ValidationReport) -> None:
    if report.passed:
        console.print(
            f"[bold green]✓ Passed: {report.runs_executed}/{report.required_runs} runs "
            f"stayed inside the set[/bold green]"
        )
        return
    console.print(
        f"[bold red]✗ Failed after {report.runs_executed}/{report.required_runs} runs[/bold red]"
    )
    violation = report.first_violation
    if violation is not None:
        d, v0, v1 = violation.state
        console.print(
            f"  cause={violation.cause.value} run={violation.run_index} "
            f"step={violation.step_index} state=(d={d:.3f}, v0={v0:.3f}, v1={v1:.3f})"
        )


def cmd_validate(args: argparse.Namespace) -> int:
    run_config = apply_overrides(load_config(args.config), args)
    setup_logging(run_config.logging)

    grid = ResultStore.load_grid(args.dump)
    grid.check_compatible(run_config.state_space.bounds, run_config.state_space.delta)

    epsilon = run_config.validation.epsilon or run_config.quantification.epsilon
    beta = run_config.validation.beta or run_config.quantification.beta
    seed = args.seed[0] if args.seed else run_config.validation.seed
    rng = np.random.default_rng(seed)
    model = build_model(run_config.model, np.random.default_rng([seed, 1]))

    console.print(
        f"\n[bold cyan]Validating {args.dump} ({grid.active_count} cells) against "
        f"{model.name}, epsilon={epsilon} beta={beta}...[/bold cyan]\n"
    )
    report = validate(
        grid, model, run_config.policy, epsilon, beta, run_config.sim_config(), rng
    )
    display_report(report)

    store = ResultStore(run_config.output.directory, {**config_echo(run_config), "dump": args.dump})
    store.save_validation(report, f"validation_{Path(args.dump).stem}.json")
    return EXIT_OK if report.passed else EXIT_VALIDATION_FAILED


# --- ncap -----------------------------------------------------------------------------


def cmd_ncap(args: argparse.Namespace) -> int:
    run_config = apply_overrides(load_config(args.config), args)
    setup_logging(run_config.logging)

    scenarios = load_battery(run_config.ncap.battery)
    seed = args.seed[0] if args.seed else run_config.ncap.seed
    model = build_model(run_config.model, np.random.default_rng(seed))
    console.print(
        f"\n[bold cyan]Running {len(scenarios)} scenarios x {run_config.ncap.repeats} "
        f"against {model.name}...[/bold cyan]\n"
    )
    rows = ncap_battery(model, scenarios, run_config.ncap.repeats, run_config.sim_config())

    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Kind", style="cyan")
    table.add_column("Passed", justify="right", style="green")
    table.add_column("Executions", justify="right")
    counts = pass_counts(rows)
    for kind, passed in counts.items():
        total = sum(1 for r in rows if r.kind == kind)
        table.add_row(kind.value, str(passed), str(total))
    console.print(table)

    collisions = sorted({r.scenario_id for r in rows if r.outcome == BatteryOutcome.COLLISION})
    if collisions:
        console.print(f"[yellow]Collisions: {', '.join(collisions)}[/yellow]")

    store = ResultStore(run_config.output.directory, config_echo(run_config))
    path = store.save_battery(rows, model.name)
    console.print(f"\n[bold green]✓ Battery saved to {path}[/bold green]\n")
    return EXIT_OK


# --- report ---------------------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    setup_logging(LoggingSection())
    paths = sorted({p for pattern in args.dumps for p in glob.glob(pattern)})
    if not paths:
        console.print(f"[red]No dumps match {' '.join(args.dumps)}[/red]")
        return EXIT_IO

    dumps = [ResultStore.load_dump(p) for p in paths]
    records = summarize_dumps(dumps)
    store = ResultStore(args.out or "results", {"dumps": [Path(p).name for p in paths]})

    table = Table(show_header=True, header_style="bold magenta")
    for column in ("SV", "S_0", "epsilon", "scenario runs", "collision runs", "IoU"):
        table.add_column(column)
    for r in records:
        table.add_row(
            r.sv,
            r.s0,
            f"{r.epsilon:g}",
            f"{r.scenario_runs_mean:.1f} ± {r.scenario_runs_std:.1f}",
            f"{r.collision_runs_mean:.1f} ± {r.collision_runs_std:.1f}",
            f"{r.iou:.3f}",
        )
    console.print(table)
    store.save_summary(records)

    for d_value in args.slice or []:
        for path, dump in zip(paths, dumps):
            grid = CoveringGrid.from_dump(dump)
            store.save_slice(
                slice_grid(grid, d_value), grid.axes[1], grid.axes[2], d_value, Path(path).stem
            )

    console.print(
        f"\n[bold green]✓ Summary of {len(paths)} dump(s) saved to {store.output_dir}"
        "[/bold green]\n"
    )
    return EXIT_OK


# --- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safeset",
        description="Almost-safe-set quantification for car-following controllers",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c",
        "--config",
        default="config.yaml",
        help="Path to configuration file (default: config.yaml)",
    )
    common.add_argument("-o", "--out", help="Override output directory from config")
    common.add_argument(
        "--seed", type=int, action="append", help="Seed to run (repeatable; overrides config)"
    )

    commands = parser.add_subparsers(dest="command", required=True)

    quantify_parser = commands.add_parser(
        "quantify", parents=[common], help="Quantify an almost safe set per seed"
    )
    quantify_parser.add_argument("--warm-start", help="Start from the set stored in a dump")
    quantify_parser.add_argument(
        "--trace", action="store_true", help="Write a per-step CSV trace of every run"
    )
    quantify_parser.set_defaults(handler=cmd_quantify)

    validate_parser = commands.add_parser(
        "validate", parents=[common], help="Validate a stored set with fresh runs"
    )
    validate_parser.add_argument("dump", help="Path to a safe-set dump")
    validate_parser.set_defaults(handler=cmd_validate)

    ncap_parser = commands.add_parser(
        "ncap", parents=[common], help="Run the concrete-scenario battery"
    )
    ncap_parser.set_defaults(handler=cmd_ncap)

    report_parser = commands.add_parser("report", help="Summarize stored sets")
    report_parser.add_argument("dumps", nargs="+", help="Dump paths or glob patterns")
    report_parser.add_argument("-o", "--out", help="Output directory (default: results)")
    report_parser.add_argument(
        "--slice", type=float, action="append", help="Also write the (v0, v1) slice at this headway"
    )
    report_parser.set_defaults(handler=cmd_report)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch the command and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        console.print("\n\n[yellow]Operation cancelled by user.[/yellow]")
        return EXIT_INTERRUPTED
    except SafeSetError as e:
        logger.debug("Configuration error", exc_info=True)
        console.print(f"[red]Error: {e}[/red]")
        return EXIT_CONFIG
    except OSError as e:
        console.print(f"[red]I/O error: {e}[/red]")
        return EXIT_IO


def main() -> None:
    """Main entry point for the application."""
    sys.exit(run())


if __name__ == "__main__":
    main()
