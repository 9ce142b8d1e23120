"""
Result persistence for quantification experiments.

This module writes safe-set dumps (JSON) and the CSV artifacts consumed by
external plotting tools: run logs, per-run traces, headway slices, battery
tables and summary tables. Every file carries the tool version and the
configuration that produced it, and every write lands atomically.
"""

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from exceptions import ConfigError
from grid import CoveringGrid
from models import (
    BatteryRow,
    RunLogEntry,
    SafeSetDump,
    SafeSetResult,
    SummaryRecord,
    ValidationReport,
)
from simulator import TRACE_COLUMNS, Trajectory
from version import __version__

logger = logging.getLogger(__name__)

TOOL_NAME = "safeset-quantifier"
SUMMARY_HEADER = ["SV", "S_0", "epsilon", "scenario runs", "collision runs", "IoU"]
RUN_LOG_HEADER = [
    "run_index",
    "d0",
    "v0_0",
    "v1_0",
    "outcome",
    "trajectory_length",
    "active_cells",
    "buffer_size",
    "consecutive_safe",
]
BATTERY_HEADER = [
    "scenario_id",
    "kind",
    "v0_init",
    "v1_init",
    "headway",
    "lead_decel",
    "repeat",
    "outcome",
    "steps",
]


def safe_name(name: str) -> str:
    """Make a model name usable in a file name."""
    return name.replace(":", "-").replace("/", "_").replace(" ", "_")


def atomic_write_text(path: Path, text: str) -> Path:
    """
    Write text to a temporary file next to path and rename it into place.

    Parameters:
        path (Path): Destination.
        text (str): File content.

    Returns:
        Path: Destination path.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return path


def _fmt_mean_std(mean: float, std: float) -> str:
    return f"{mean:.1f} ± {std:.1f}"


class ResultStore:
    """
    Manages the output directory of an experiment.

    Each save method renders its content fully in memory and then writes it
    with atomic_write_text, so readers never observe partial files.
    """

    def __init__(self, output_dir: str = "results", config_echo: Optional[Dict[str, Any]] = None):
        """
        Initialize the store.

        Parameters:
            output_dir (str): Directory for all outputs (created if missing).
            config_echo (Optional[Dict[str, Any]]): Configuration embedded in every file.
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.config_echo = config_echo or {}

    # --- CSV helpers -----------------------------------------------------------------

    def _csv_text(self, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        buffer = io.StringIO()
        buffer.write(f"# {TOOL_NAME} {__version__}\n")
        buffer.write(f"# config: {json.dumps(self.config_echo, sort_keys=True)}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buffer.getvalue()

    def _save_csv(
        self, filename: str, header: Sequence[str], rows: Iterable[Sequence[Any]]
    ) -> Path:
        filepath = self.output_dir / filename
        atomic_write_text(filepath, self._csv_text(header, rows))
        logger.info(f"Saved {filepath}")
        return filepath

    # --- dumps -----------------------------------------------------------------------

    def dump_filename(self, model_name: str, seed: int) -> str:
        return f"safeset_{safe_name(model_name)}_seed{seed}.json"

    def save_result(self, result: SafeSetResult, initialization: str = "full") -> Path:
        """
        Save a quantification result as a self-describing JSON dump.

        Parameters:
            result (SafeSetResult): Result to store.
            initialization (str): Label of the initial set ('full' or a dump path).

        Returns:
            Path: Path to the saved file.
        """
        stats = {
            "model": result.model_name,
            "initialization": initialization,
            "epsilon": result.config.epsilon,
            "beta": result.config.beta,
            "total_runs": result.total_runs,
            "collision_runs": result.collision_runs,
            "consecutive_safe_at_exit": result.consecutive_safe_at_exit,
            "required_runs": result.required_runs,
            "exit_reason": result.exit_reason.value,
            "expansions": result.expansions,
            "closure_violations": result.closure_violations,
        }
        dump = result.grid.to_dump(
            tool=TOOL_NAME,
            seed=result.seed,
            stats=stats,
            config={**self.config_echo, "quantification": result.config.model_dump(mode="json")},
        )
        return self.save_dump(dump, self.dump_filename(result.model_name, result.seed))

    def save_dump(self, dump: SafeSetDump, filename: str) -> Path:
        """Write a dump to the output directory."""
        filepath = self.output_dir / filename
        text = json.dumps(dump.model_dump(mode="json"), indent=2, ensure_ascii=False)
        atomic_write_text(filepath, text + "\n")
        logger.info(f"Safe set saved to {filepath}")
        return filepath

    @staticmethod
    def load_dump(filepath: Path | str) -> SafeSetDump:
        """
        Load a dump written by save_dump.

        Raises:
            OSError: If the file cannot be read.
            ConfigError: If the content is not a valid dump.
        """
        filepath = Path(filepath)
        with open(filepath, "r", encoding="utf-8") as f:
            text = f.read()
        try:
            dump = SafeSetDump(**json.loads(text))
        except (json.JSONDecodeError, ValidationError, TypeError) as e:
            raise ConfigError(f"{filepath} is not a valid safe-set dump: {e}") from e
        logger.debug(f"Loaded dump {filepath}: {len(dump.cells)} active cells")
        return dump

    @classmethod
    def load_grid(cls, filepath: Path | str) -> CoveringGrid:
        """Load a dump and rebuild its grid."""
        return CoveringGrid.from_dump(cls.load_dump(filepath))

    def save_validation(self, report: ValidationReport, filename: str) -> Path:
        """Write a validation report as JSON."""
        filepath = self.output_dir / filename
        payload = {
            "tool": TOOL_NAME,
            "version": __version__,
            "config": self.config_echo,
            "report": report.model_dump(mode="json"),
        }
        atomic_write_text(filepath, json.dumps(payload, indent=2) + "\n")
        logger.info(f"Validation report saved to {filepath}")
        return filepath

    # --- CSV artifacts ---------------------------------------------------------------

    def save_run_log(self, entries: List[RunLogEntry], seed: int) -> Path:
        rows = (
            [
                e.run_index,
                *e.s0,
                e.outcome.value,
                e.trajectory_length,
                e.active_cells,
                e.buffer_size,
                e.consecutive_safe,
            ]
            for e in entries
        )
        return self._save_csv(f"run_log_seed{seed}.csv", RUN_LOG_HEADER, rows)

    def save_trace(self, trajectory: Trajectory, seed: int, run_index: int) -> Path:
        """Write the per-step trace of one run under traces/seed<N>/."""
        return self._save_csv(
            f"traces/seed{seed}/run_{run_index:05d}.csv", TRACE_COLUMNS, trajectory.trace_rows()
        )

    def save_slice(
        self, mask: np.ndarray, v0_axis: np.ndarray, v1_axis: np.ndarray, d_value: float, name: str
    ) -> Path:
        """
        Write a (v0, v1) slice: first row holds the v1 centroids, first column the v0 centroids.
        """
        header = ["v0\\v1", *(f"{v:g}" for v in v1_axis)]
        rows = (
            [f"{v0:g}", *(int(cell) for cell in mask[i])] for i, v0 in enumerate(v0_axis)
        )
        return self._save_csv(f"slice_{safe_name(name)}_d{d_value:g}.csv", header, rows)

    def save_battery(self, rows: List[BatteryRow], model_name: str) -> Path:
        table = (
            [
                r.scenario_id,
                r.kind.value,
                r.v0_init,
                r.v1_init,
                r.headway,
                r.lead_decel,
                r.repeat,
                r.outcome.value,
                r.steps,
            ]
            for r in rows
        )
        return self._save_csv(f"battery_{safe_name(model_name)}.csv", BATTERY_HEADER, table)

    def save_summary(self, records: List[SummaryRecord], filename: str = "summary.csv") -> Path:
        """Write summary records in the SV / S_0 / epsilon / runs / collisions / IoU layout."""
        rows = (
            [
                r.sv,
                r.s0,
                f"{r.epsilon:g}",
                _fmt_mean_std(r.scenario_runs_mean, r.scenario_runs_std),
                _fmt_mean_std(r.collision_runs_mean, r.collision_runs_std),
                f"{r.iou:.3f}",
            ]
            for r in records
        )
        return self._save_csv(filename, SUMMARY_HEADER, rows)
