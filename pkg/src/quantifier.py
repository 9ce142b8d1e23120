"""
Almost-safe-set quantification and validation.

The quantifier alternates scenario sampling with pruning and expansion of a
delta-covering grid. A run that collides removes its start cell together with
every cell recorded as leading into it; safe runs extend the cover to the states
they visit that no cell of their lattice region owns. It stops once enough
consecutive safe runs from uniformly drawn centroids have been observed for the
requested (epsilon, beta).
"""

import logging
import math
from typing import Callable, List, Optional, Tuple

import numpy as np

from exceptions import ConfigError, GridExhaustedError, PreconditionError
from graph import TransitionGraph
from grid import CoveringGrid, make_covering_grid
from models import (
    CellId,
    ExitReason,
    LeadPolicy,
    QuantConfig,
    RunLogEntry,
    SafeSetResult,
    SimConfig,
    State,
    ValidationReport,
    Violation,
    ViolationCause,
)
from replay_buffer import ReplayBuffer
from simulator import Trajectory, run_scenario
from vehicles import SubjectVehicleModel

logger = logging.getLogger(__name__)

RUN_CAP_FACTOR = 50

RunCallback = Callable[[RunLogEntry], None]
TrajectoryCallback = Callable[[int, Trajectory], None]


def required_consecutive_runs(epsilon: float, beta: float) -> int:
    """
    Number of consecutive in-set runs that certify an epsilon-delta almost safe set.

    Returns ceil(ln(beta) / ln(1 - epsilon)), at least 1; epsilon = 1 needs one run.

    Parameters:
        epsilon (float): Tolerated escape probability, in (0, 1].
        beta (float): One minus the confidence level, in (0, 1].

    Returns:
        int: Required run count.

    Raises:
        PreconditionError: If an argument lies outside (0, 1].
    """
    for name, value in (("epsilon", epsilon), ("beta", beta)):
        if not (math.isfinite(value) and 0.0 < value <= 1.0):
            raise PreconditionError(f"{name} must lie in (0, 1], got {value}")
    if epsilon == 1.0:
        return 1
    ratio = math.log(beta) / math.log1p(-epsilon)
    return max(1, math.ceil(ratio - 1e-9))


def pruning_closure_violations(
    grid: CoveringGrid, graph: TransitionGraph
) -> List[Tuple[CellId, CellId]]:
    """Recorded edges that lead from an active cell into a removed cell."""
    return [(u, v) for u, v in graph.edges if grid.is_active(u) and v in grid.removed]


def exclude_failure_cells(grid: CoveringGrid, collision_headway: float) -> int:
    """Remove every active cell whose neighborhood reaches the failure set."""
    overlapping = [c for c in grid.active_cells() if grid.intersects_failure(c, collision_headway)]
    for cell in overlapping:
        grid.remove(cell)
    return len(overlapping)


class SafeSetQuantifier:
    """
    Sequential pruning / exploration loop over a covering grid.

    Each instance performs one quantification; it owns its grid, graphs,
    buffer and random source.
    """

    def __init__(
        self,
        cfg: QuantConfig,
        model: SubjectVehicleModel,
        initial_grid: Optional[CoveringGrid] = None,
        on_run: Optional[RunCallback] = None,
        on_trajectory: Optional[TrajectoryCallback] = None,
    ):
        """
        Prepare a quantification.

        Parameters:
            cfg (QuantConfig): Quantification inputs.
            model (SubjectVehicleModel): SV under test.
            initial_grid (Optional[CoveringGrid]): Warm-start set; the full lattice if None.
            on_run (Optional[RunCallback]): Receives one log entry per scenario run.
            on_trajectory (Optional[TrajectoryCallback]): Receives every trajectory.

        Raises:
            ConfigError: If the run cap does not exceed the required run count.
            GridMismatchError: If the warm-start grid has other bounds or delta.
        """
        self.cfg = cfg
        self.model = model
        self.on_run = on_run
        self.on_trajectory = on_trajectory
        self.required = required_consecutive_runs(cfg.epsilon, cfg.beta)
        self.max_total_runs = cfg.max_total_runs or RUN_CAP_FACTOR * self.required
        if self.max_total_runs <= self.required:
            raise ConfigError(
                f"max_total_runs ({self.max_total_runs}) must exceed the "
                f"{self.required} consecutive runs required"
            )

        self.rng = np.random.default_rng(cfg.seed)
        if initial_grid is None:
            self.grid = make_covering_grid(cfg.bounds, cfg.delta, cfg.normalize_distance)
        else:
            initial_grid.check_compatible(cfg.bounds, cfg.delta)
            self.grid = initial_grid.copy()
            dropped = self.grid.drop_extras()
            if dropped:
                logger.info(f"Warm start dropped {dropped} expansion centroids")
        excluded = exclude_failure_cells(self.grid, cfg.sim.collision_headway)
        if excluded:
            logger.info(f"Excluded {excluded} cells overlapping the failure set")

        self.sigma_graph = TransitionGraph(self.grid.active_cells())
        self.unsafe_graph = TransitionGraph()
        self.buffer = ReplayBuffer()
        self.consecutive = 0
        self.total_runs = 0
        self.collision_runs = 0
        self.expansions = 0

    # --- sampling ---------------------------------------------------------------

    def _next_initial_state(self) -> Tuple[CellId, State]:
        if self.buffer.is_empty():
            cell = self.grid.sample_cell(self.rng)
        else:
            cell = self.grid.nearest_centroid(self.buffer.pop())
        return cell, self.grid.centroid(cell)

    def _buffer_state(self, s: State) -> None:
        key = self.grid.snap(s) if self.cfg.buffer_dedupe else None
        self.buffer.push(s, key)

    # --- branches ---------------------------------------------------------------

    def _prune(self, trajectory: Trajectory, start_cell: CellId) -> None:
        """Collision branch: buffer the run and remove the start cell with its ancestors."""
        for ancestor in self.sigma_graph.ancestors(start_cell):
            self.grid.remove(ancestor)
        states = trajectory.states
        for current, following in zip(states[:-1], states[1:]):
            self._buffer_state(current)
            if self.cfg.prune_visited_cells:
                cell = self.grid.cell_of(current)
                if cell is not None:
                    for ancestor in self.sigma_graph.ancestors(cell):
                        self.grid.remove(ancestor)
            self.unsafe_graph.add_edge(self.grid.snap(current), self.grid.snap(following))
        self._buffer_state(states[-1])
        self.consecutive = 0

    def _explore(self, trajectory: Trajectory, start_cell: CellId) -> None:
        """Safe branch: extend the cover along the run and update the consecutive count."""
        active_before = self.grid.active_count
        left_set = False
        previous = start_cell
        for s in trajectory.states[1:]:
            cell = self.grid.owner(s)
            if cell is None:
                if self.grid.state_intersects_failure(s, self.cfg.sim.collision_headway):
                    left_set = True
                    continue
                cell = self.grid.add_centroid(s)
                self.sigma_graph.add_edge(previous, cell)
                self.expansions += 1
                previous = cell
            elif self.cfg.cascade_edges and cell != previous:
                self.sigma_graph.add_edge(previous, cell)
                previous = cell

        unchanged = self.grid.active_count == active_before
        if unchanged and self.buffer.is_empty() and not left_set:
            self.consecutive += 1
        else:
            self.consecutive = 0

    # --- main loop --------------------------------------------------------------

    def run(self) -> SafeSetResult:
        """
        Execute the quantification loop.

        Returns:
            SafeSetResult: Final set and run statistics. Exhaustion and the run
            cap are reported through exit_reason.
        """
        logger.info(
            f"Quantifying {self.model.name}: epsilon={self.cfg.epsilon} beta={self.cfg.beta} "
            f"seed={self.cfg.seed}, {self.grid.active_count} initial cells, "
            f"{self.required} consecutive runs required"
        )
        exit_reason = ExitReason.VALIDATED
        while self.consecutive < self.required:
            if self.grid.is_empty():
                exit_reason = ExitReason.EXHAUSTED_EMPTY
                break
            if self.total_runs >= self.max_total_runs:
                exit_reason = ExitReason.RUN_CAP
                break

            try:
                start_cell, s0 = self._next_initial_state()
            except GridExhaustedError:
                exit_reason = ExitReason.EXHAUSTED_EMPTY
                break
            trajectory = run_scenario(self.model, self.cfg.policy, s0, self.cfg.sim, self.rng)
            run_index = self.total_runs
            self.total_runs += 1

            if trajectory.collided:
                self.collision_runs += 1
                self._prune(trajectory, start_cell)
            else:
                self._explore(trajectory, start_cell)

            self._report_run(run_index, s0, trajectory)

        if exit_reason == ExitReason.EXHAUSTED_EMPTY:
            logger.warning(f"Covering set emptied after {self.total_runs} runs")
        elif exit_reason == ExitReason.RUN_CAP:
            logger.warning(f"Run cap {self.max_total_runs} reached before validation")

        violations = pruning_closure_violations(self.grid, self.sigma_graph)
        if violations:
            logger.error(f"{len(violations)} safe-graph edges lead into removed cells")

        logger.info(
            f"Finished {self.model.name} seed={self.cfg.seed}: {exit_reason.value}, "
            f"{self.total_runs} runs, {self.collision_runs} collisions, "
            f"{self.grid.active_count} active cells"
        )
        return SafeSetResult(
            grid=self.grid,
            total_runs=self.total_runs,
            collision_runs=self.collision_runs,
            consecutive_safe_at_exit=self.consecutive,
            required_runs=self.required,
            exit_reason=exit_reason,
            config=self.cfg,
            seed=self.cfg.seed,
            model_name=self.model.name,
            expansions=self.expansions,
            closure_violations=len(violations),
            sigma_graph=self.sigma_graph,
            unsafe_graph=self.unsafe_graph,
        )

    def _report_run(self, run_index: int, s0: State, trajectory: Trajectory) -> None:
        entry = RunLogEntry(
            run_index=run_index,
            s0=tuple(s0),
            outcome=trajectory.terminated_by,
            trajectory_length=len(trajectory),
            active_cells=self.grid.active_count,
            buffer_size=len(self.buffer),
            consecutive_safe=self.consecutive,
        )
        logger.debug(
            f"run {run_index}: s0={tuple(round(x, 2) for x in s0)} {entry.outcome.value} "
            f"len={entry.trajectory_length} active={entry.active_cells} "
            f"buffer={entry.buffer_size} N={entry.consecutive_safe}"
        )
        if self.on_run is not None:
            self.on_run(entry)
        if self.on_trajectory is not None:
            self.on_trajectory(run_index, trajectory)


def quantify(
    cfg: QuantConfig,
    model: SubjectVehicleModel,
    initial_grid: Optional[CoveringGrid] = None,
    on_run: Optional[RunCallback] = None,
    on_trajectory: Optional[TrajectoryCallback] = None,
) -> SafeSetResult:
    """
    Quantify an epsilon-delta almost safe set for a model.

    Parameters:
        cfg (QuantConfig): Quantification inputs.
        model (SubjectVehicleModel): SV under test.
        initial_grid (Optional[CoveringGrid]): Warm-start set; the full lattice if None.
        on_run (Optional[RunCallback]): Receives one log entry per scenario run.
        on_trajectory (Optional[TrajectoryCallback]): Receives every trajectory.

    Returns:
        SafeSetResult: Final set and statistics.
    """
    return SafeSetQuantifier(cfg, model, initial_grid, on_run, on_trajectory).run()


def _first_violation(
    grid: CoveringGrid, trajectory: Trajectory
) -> Optional[Tuple[int, State, ViolationCause]]:
    last = len(trajectory.states) - 1
    for k, s in enumerate(trajectory.states):
        if k == last and trajectory.collided:
            return k, s, ViolationCause.COLLISION
        if not grid.covers(s):
            return k, s, ViolationCause.LEFT_SET
    return None


def validate(
    grid: CoveringGrid,
    model: SubjectVehicleModel,
    policy: LeadPolicy,
    epsilon: float,
    beta: float,
    sim: SimConfig,
    rng: np.random.Generator,
) -> ValidationReport:
    """
    Validate a covering set with i.i.d. runs from uniformly drawn centroids.

    The set passes when none of the required runs collides or leaves the union
    of active neighborhoods. Runs stop at the first violation.

    Parameters:
        grid (CoveringGrid): Candidate almost safe set.
        model (SubjectVehicleModel): SV under test.
        policy (LeadPolicy): Lead testing policy.
        epsilon (float): Tolerated escape probability.
        beta (float): One minus the confidence level.
        sim (SimConfig): Simulation parameters.
        rng (np.random.Generator): Random source for centroid draws.

    Returns:
        ValidationReport: Outcome and first violation, if any.

    Raises:
        PreconditionError: If the grid is empty.
    """
    required = required_consecutive_runs(epsilon, beta)
    if grid.is_empty():
        raise PreconditionError("cannot validate an empty covering set")

    for cell in grid.active_cells():
        if grid.intersects_failure(cell, sim.collision_headway):
            logger.warning(f"Cell {cell} overlaps the failure set")
            return ValidationReport(
                passed=False,
                runs_executed=0,
                required_runs=required,
                first_violation=Violation(
                    run_index=0,
                    step_index=0,
                    state=tuple(grid.centroid(cell)),
                    cause=ViolationCause.FAILURE_OVERLAP,
                ),
            )

    for run_index in range(required):
        s0 = grid.sample_centroid(rng)
        trajectory = run_scenario(model, policy, s0, sim, rng)
        found = _first_violation(grid, trajectory)
        if found is not None:
            step, state, cause = found
            logger.info(f"Validation failed on run {run_index} step {step}: {cause.value}")
            return ValidationReport(
                passed=False,
                runs_executed=run_index + 1,
                required_runs=required,
                first_violation=Violation(
                    run_index=run_index, step_index=step, state=tuple(state), cause=cause
                ),
            )

    logger.info(f"Validation passed: {required} runs stayed inside the set")
    return ValidationReport(passed=True, runs_executed=required, required_runs=required)
