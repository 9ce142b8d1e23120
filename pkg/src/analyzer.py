"""
Post-processing of quantified safe sets and the concrete-scenario battery.

This module compares and summarizes quantification results:
- Intersection-over-union of safe sets across seeds
- Headway slices over the (v0, v1) lattice and set volume
- Mean / sample std of run counts per experiment group
- Monte Carlo escape-rate estimation for validated sets
- NCAP-style car-to-car rear scenarios run against a model
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import yaml
from pydantic import ValidationError

from exceptions import ConfigError, PreconditionError
from grid import CoveringGrid
from models import (
    BatteryOutcome,
    BatteryRow,
    CellId,
    LeadPolicy,
    LeadPolicyKind,
    NcapKind,
    NcapScenario,
    ProfileSegment,
    SafeSetDump,
    SafeSetResult,
    SimConfig,
    State,
    StateBounds,
    SummaryRecord,
)
from simulator import run_scenario
from vehicles import SubjectVehicleModel

logger = logging.getLogger(__name__)

GridLike = Union[CoveringGrid, SafeSetResult]


def _as_grid(item: GridLike) -> CoveringGrid:
    return item.grid if isinstance(item, SafeSetResult) else item


def iou(batch: Sequence[GridLike]) -> float:
    """
    Intersection-over-union of the active cells of several sets.

    Expansion centroids count as the lattice cell they snap to. A batch of
    empty sets has IoU 1.

    Parameters:
        batch (Sequence[GridLike]): Results or grids over one lattice.

    Returns:
        float: Ratio in [0, 1].

    Raises:
        PreconditionError: If the batch is empty.
        GridMismatchError: If the grids differ in bounds or delta.
    """
    grids = [_as_grid(item) for item in batch]
    if not grids:
        raise PreconditionError("iou of an empty batch")
    reference = grids[0]
    for grid in grids[1:]:
        grid.check_compatible(reference.bounds, reference.delta)

    cell_sets: List[Set[CellId]] = [grid.snapped_cells() for grid in grids]
    union = set().union(*cell_sets)
    if not union:
        return 1.0
    intersection = set.intersection(*cell_sets)
    return len(intersection) / len(union)


def slice_grid(grid: CoveringGrid, d_value: float) -> np.ndarray:
    """
    Active (v0, v1) cells of the lattice layer containing a headway.

    Parameters:
        grid (CoveringGrid): Set to slice.
        d_value (float): Headway, m, within the bounds.

    Returns:
        np.ndarray: Boolean array of shape (n_v0, n_v1).

    Raises:
        PreconditionError: If d_value lies outside the bounds.
    """
    lower, upper = grid.bounds.lower[0], grid.bounds.upper[0]
    if not lower <= d_value <= upper:
        raise PreconditionError(f"slice headway {d_value} outside [{lower}, {upper}]")
    layer = int(np.argmin(np.abs(grid.axes[0] - d_value)))
    _, n1, n2 = grid.lattice_shape
    mask = np.zeros((n1, n2), dtype=bool)
    for d_idx, i, j in grid.snapped_cells():
        if d_idx == layer:
            mask[i, j] = True
    return mask


def volume(grid: CoveringGrid) -> Tuple[int, float]:
    """
    Occupied lattice cell count and its fraction of the initial lattice.

    Expansion centroids count through the lattice cell they snap to, so a region
    is counted once however many centroids cover it.
    """
    occupied = len(grid.snapped_cells())
    return occupied, occupied / grid.initial_size


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    array = np.asarray(values, dtype=float)
    std = float(np.std(array, ddof=1)) if len(array) > 1 else 0.0
    return float(np.mean(array)), std


def summarize_runs(
    grids: Sequence[CoveringGrid],
    total_runs: Sequence[int],
    collision_runs: Sequence[int],
    sv: str,
    s0: str,
    epsilon: float,
) -> SummaryRecord:
    """Build a summary record from per-seed grids and run counts."""
    if not grids:
        raise PreconditionError("cannot summarize an empty batch")
    runs_mean, runs_std = _mean_std(total_runs)
    collisions_mean, collisions_std = _mean_std(collision_runs)
    return SummaryRecord(
        sv=sv,
        s0=s0,
        epsilon=epsilon,
        runs=len(grids),
        scenario_runs_mean=runs_mean,
        scenario_runs_std=runs_std,
        collision_runs_mean=collisions_mean,
        collision_runs_std=collisions_std,
        iou=iou(grids),
    )


def summarize(results: Sequence[SafeSetResult], s0: str = "full") -> SummaryRecord:
    """
    Mean and sample standard deviation of run counts, plus IoU, over a seed batch.

    Parameters:
        results (Sequence[SafeSetResult]): Results with identical configs except seed.
        s0 (str): Label of the initial set.

    Returns:
        SummaryRecord: Aggregated statistics; std is 0 for a single result.
    """
    if not results:
        raise PreconditionError("cannot summarize an empty batch")
    return summarize_runs(
        [r.grid for r in results],
        [r.total_runs for r in results],
        [r.collision_runs for r in results],
        sv=results[0].model_name,
        s0=s0,
        epsilon=results[0].config.epsilon,
    )


def summarize_dumps(dumps: Sequence[SafeSetDump]) -> List[SummaryRecord]:
    """
    Group stored results by (model, initial set, epsilon) and summarize each group.

    Returns:
        List[SummaryRecord]: One record per group, in order of first appearance.
    """
    groups: Dict[Tuple[str, str, float], List[SafeSetDump]] = {}
    for dump in dumps:
        key = (
            str(dump.stats.get("model", "unknown")),
            str(dump.stats.get("initialization", "full")),
            float(dump.stats.get("epsilon", 0.0)),
        )
        groups.setdefault(key, []).append(dump)

    records = []
    for (sv, s0, epsilon), members in groups.items():
        records.append(
            summarize_runs(
                [CoveringGrid.from_dump(d) for d in members],
                [int(d.stats.get("total_runs", 0)) for d in members],
                [int(d.stats.get("collision_runs", 0)) for d in members],
                sv=sv,
                s0=s0,
                epsilon=epsilon,
            )
        )
        logger.info(f"Summarized {len(members)} results for {sv} / {s0} / epsilon={epsilon}")
    return records


def escape_rate(
    grid: CoveringGrid,
    model: SubjectVehicleModel,
    policy: LeadPolicy,
    sim: SimConfig,
    runs: int,
    rng: np.random.Generator,
) -> float:
    """
    Fraction of runs from uniformly drawn centroids that collide or leave the set.

    Parameters:
        grid (CoveringGrid): Set under test.
        model (SubjectVehicleModel): SV under test.
        policy (LeadPolicy): Lead testing policy.
        sim (SimConfig): Simulation parameters.
        runs (int): Number of independent runs.
        rng (np.random.Generator): Random source.

    Returns:
        float: Empirical escape probability.
    """
    if runs < 1:
        raise PreconditionError(f"runs must be positive, got {runs}")
    escapes = 0
    for _ in range(runs):
        trajectory = run_scenario(model, policy, grid.sample_centroid(rng), sim, rng)
        if trajectory.collided or not all(grid.covers(s) for s in trajectory.states):
            escapes += 1
    return escapes / runs


# --- NCAP battery ---------------------------------------------------------------------


def load_battery(path: Union[str, Path]) -> List[NcapScenario]:
    """
    Load a scenario battery from YAML (a top-level 'scenarios' list).

    Raises:
        ConfigError: If the file is malformed or a scenario is invalid.
    """
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    try:
        scenarios = [NcapScenario(**row) for row in data.get("scenarios", [])]
    except (ValidationError, TypeError) as e:
        raise ConfigError(f"invalid battery {path}: {e}") from e
    if not scenarios:
        raise ConfigError(f"battery {path} has no scenarios")
    ids = [s.id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"battery {path} has duplicate scenario ids")
    logger.info(f"Loaded {len(scenarios)} scenarios from {path}")
    return scenarios


def scenario_policy(scenario: NcapScenario) -> LeadPolicy:
    """Lead testing policy that realizes a concrete scenario."""
    if scenario.kind == NcapKind.CCRS:
        return LeadPolicy(kind=LeadPolicyKind.STATIONARY)
    if scenario.kind == NcapKind.CCRM:
        return LeadPolicy(kind=LeadPolicyKind.CONSTANT_SPEED)
    if scenario.lead_decel_duration is None:
        return LeadPolicy(kind=LeadPolicyKind.CONSTANT_DECEL, a_brake=-scenario.lead_decel)
    return LeadPolicy(
        kind=LeadPolicyKind.PIECEWISE_PROFILE,
        profile=[
            ProfileSegment(
                duration=scenario.lead_decel_duration, acceleration=-scenario.lead_decel
            )
        ],
    )


def scenario_sim(scenario: NcapScenario, sim: SimConfig) -> SimConfig:
    """Widen the simulation bounds so the scenario's initial state fits."""
    lower, upper = sim.bounds.lower, sim.bounds.upper
    widened = StateBounds(
        lower=lower,
        upper=(
            max(upper[0], scenario.headway),
            max(upper[1], scenario.v0_init),
            max(upper[2], scenario.v1_init),
        ),
    )
    return sim.model_copy(update={"bounds": widened})


class NcapBattery:
    """
    Runs a list of concrete car-to-car rear scenarios against one model.

    Scenarios run in order; rows come back ordered by scenario then repeat.
    """

    def __init__(
        self,
        model: SubjectVehicleModel,
        scenarios: List[NcapScenario],
        sim: Optional[SimConfig] = None,
        repeats: int = 1,
    ):
        """
        Initialize the battery.

        Parameters:
            model (SubjectVehicleModel): SV under test.
            scenarios (List[NcapScenario]): Concrete scenarios.
            sim (Optional[SimConfig]): Base simulation parameters.
            repeats (int): Executions per scenario.
        """
        if repeats < 1:
            raise PreconditionError(f"repeats must be positive, got {repeats}")
        self.model = model
        self.scenarios = scenarios
        self.sim = sim or SimConfig()
        self.repeats = repeats

    def run_scenario(self, scenario: NcapScenario, repeat: int) -> BatteryRow:
        """Execute one scenario once."""
        s0 = State(scenario.headway, scenario.v0_init, scenario.v1_init)
        trajectory = run_scenario(
            self.model, scenario_policy(scenario), s0, scenario_sim(scenario, self.sim)
        )
        outcome = BatteryOutcome.COLLISION if trajectory.collided else BatteryOutcome.PASS
        return BatteryRow(
            scenario_id=scenario.id,
            kind=scenario.kind,
            v0_init=scenario.v0_init,
            v1_init=scenario.v1_init,
            headway=scenario.headway,
            lead_decel=scenario.lead_decel,
            repeat=repeat,
            outcome=outcome,
            steps=len(trajectory) - 1,
        )

    def run(self) -> List[BatteryRow]:
        """
        Execute every scenario the configured number of times.

        Returns:
            List[BatteryRow]: One row per execution.
        """
        logger.info(
            f"Running {len(self.scenarios)} scenarios x {self.repeats} against {self.model.name}"
        )
        rows = [
            self.run_scenario(scenario, repeat)
            for scenario in self.scenarios
            for repeat in range(self.repeats)
        ]
        failures = [r.scenario_id for r in rows if r.outcome == BatteryOutcome.COLLISION]
        logger.info(f"{self.model.name}: {len(rows) - len(failures)}/{len(rows)} passed")
        if failures:
            logger.debug(f"Collisions in: {', '.join(sorted(set(failures)))}")
        return rows


def ncap_battery(
    model: SubjectVehicleModel,
    scenarios: List[NcapScenario],
    repeats: int = 1,
    sim: Optional[SimConfig] = None,
) -> List[BatteryRow]:
    """Run a scenario battery; see NcapBattery."""
    return NcapBattery(model, scenarios, sim, repeats).run()


def pass_counts(rows: Sequence[BatteryRow]) -> Dict[NcapKind, int]:
    """Number of passing executions per scenario kind."""
    counts = {kind: 0 for kind in NcapKind}
    for row in rows:
        if row.outcome == BatteryOutcome.PASS:
            counts[row.kind] += 1
    return counts
