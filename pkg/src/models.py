"""
Data models for car-following safe-set quantification.

This module contains the state-space types, the pydantic configuration models
for simulation, vehicle models, quantification and the run configuration file,
and the pydantic records produced by runs (results, validation reports,
battery rows, summaries, dumps).
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vector3 = Tuple[float, float, float]
CellId = Tuple[int, int, int]


class State(NamedTuple):
    """One point of the scenario state space."""

    d: float  # headway, m
    v0: float  # follower (SV) speed, m/s
    v1: float  # lead (POV) speed, m/s


def _vector_input(value: Any, field_name: str) -> Any:
    """Accept a bare 3-list in YAML where a wrapper model is expected."""
    if isinstance(value, (list, tuple)):
        return {field_name: value}
    return value


class StateBounds(BaseModel):
    """Per-dimension box bounds of the state space (d, v0, v1)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lower: Vector3 = Field(default=(0.0, 0.0, 0.0), description="Per-dimension minima")
    upper: Vector3 = Field(default=(100.0, 30.0, 30.0), description="d_max, v_max, v_max")

    @model_validator(mode="after")
    def _check_order(self) -> "StateBounds":
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"lower {self.lower} must be below upper {self.upper} componentwise")
        return self

    @property
    def d_max(self) -> float:
        return self.upper[0]

    @property
    def v0_max(self) -> float:
        return self.upper[1]

    @property
    def v1_max(self) -> float:
        return self.upper[2]

    def contains(self, s: State) -> bool:
        """Return True if s lies inside the box (inclusive)."""
        return all(lo <= x <= hi for x, lo, hi in zip(s, self.lower, self.upper))

    def clip(self, s: State) -> State:
        """Clip a state into the box."""
        return State(
            *(min(max(x, lo), hi) for x, lo, hi in zip(s, self.lower, self.upper))
        )


class Delta(BaseModel):
    """Per-dimension neighborhood half-widths."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    widths: Vector3 = Field(..., description="Half-widths in state units (m, m/s, m/s)")

    @model_validator(mode="before")
    @classmethod
    def _from_list(cls, value: Any) -> Any:
        return _vector_input(value, "widths")

    @field_validator("widths")
    @classmethod
    def _positive(cls, widths: Vector3) -> Vector3:
        if any(w <= 0 for w in widths):
            raise ValueError(f"delta must be positive componentwise, got {widths}")
        return widths


class LeadPolicyKind(str, Enum):
    """Behavior rule of the lead vehicle."""

    CONSTANT_DECEL = "constant_decel"
    CONSTANT_SPEED = "constant_speed"
    STATIONARY = "stationary"
    PIECEWISE_PROFILE = "piecewise_profile"


class ProfileSegment(BaseModel):
    """One segment of a piecewise lead acceleration profile."""

    model_config = ConfigDict(extra="forbid")

    duration: float = Field(..., gt=0, description="Segment length, s")
    acceleration: float = Field(..., description="Lead acceleration during the segment, m/s^2")


class LeadPolicy(BaseModel):
    """Testing policy of the lead vehicle (POV)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: LeadPolicyKind = Field(default=LeadPolicyKind.CONSTANT_DECEL)
    a_brake: float = Field(default=-5.0, le=0, description="Constant deceleration, m/s^2")
    profile: List[ProfileSegment] = Field(
        default_factory=list, description="Segments for piecewise_profile; zero after the last"
    )

    @model_validator(mode="after")
    def _check_profile(self) -> "LeadPolicy":
        if self.kind == LeadPolicyKind.PIECEWISE_PROFILE and not self.profile:
            raise ValueError("piecewise_profile requires at least one segment")
        return self


class HeadwayOverflow(str, Enum):
    """Treatment of headways beyond d_max."""

    CLIP = "clip"
    TRUNCATE = "truncate"


class SimConfig(BaseModel):
    """Parameters of one scenario run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = Field(default=0.1, gt=0, description="Step period, s")
    K: int = Field(default=300, ge=2, description="Maximum steps per run")
    bounds: StateBounds = Field(default_factory=StateBounds)
    collision_headway: float = Field(default=0.0, description="Failure when d <= this, m")
    headway_overflow: HeadwayOverflow = Field(default=HeadwayOverflow.CLIP)


class TerminationCause(str, Enum):
    """Why a scenario run ended."""

    COLLISION = "collision"
    HORIZON = "horizon"
    TRUNCATED = "truncated"


class IdmParams(BaseModel):
    """Intelligent Driver Model parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    min_gap: float = Field(default=2.0, gt=0, description="Minimum safe distance, m")
    a_max: float = Field(default=0.73, gt=0, description="Maximum acceleration, m/s^2")
    b_comf: float = Field(default=1.67, gt=0, description="Comfortable deceleration, m/s^2")
    time_headway: float = Field(default=2.0, gt=0, description="Safe time headway, s")
    exponent: float = Field(default=4.0, gt=0, description="Acceleration exponent")
    vehicle_length: float = Field(default=4.0, gt=0, description="Vehicle length, m")
    v_free: float = Field(default=30.0, gt=0, description="Free-traffic speed, m/s")
    b_cap: float = Field(default=5.0, gt=0, description="Maximum braking, m/s^2")
    subtract_vehicle_length: bool = Field(
        default=False, description="Use gap = d - vehicle_length (center-to-center headways)"
    )
    gap_floor: float = Field(default=0.01, gt=0, description="Lower bound on the gap, m")


class FreeSpeedMode(str, Enum):
    """How ACC picks its cruise speed for a run."""

    FIXED = "fixed"
    AT_LEAST_INITIAL = "at_least_initial"


class AccAebParams(BaseModel):
    """Parameters of the switched ACC / AEB controller."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    ttc_threshold: float = Field(default=1.0, gt=0, description="ACC to AEB switch, s")
    kp: float = Field(default=0.8, gt=0, description="Proportional gain on time-headway error")
    ki: float = Field(default=0.05, gt=0, description="Integral gain on time-headway error")
    k_speed: float = Field(default=0.4, gt=0, description="Speed-tracking gain, 1/s")
    desired_time_headway: float = Field(default=1.5, gt=0, description="Target headway, s")
    a_max_acc: float = Field(default=2.0, gt=0, description="ACC acceleration cap, m/s^2")
    b_comf_acc: float = Field(default=2.0, gt=0, description="ACC braking cap, m/s^2")
    b_max: float = Field(default=10.0, description="AEB braking cap, m/s^2")
    jerk_limit: float = Field(default=16.0, description="Deceleration change-rate cap, m/s^3")
    v_free: float = Field(default=30.0, gt=0, description="Free-traffic speed, m/s")
    v_eps: float = Field(default=0.1, gt=0, description="Speed floor for time headway, m/s")
    integral_limit: float = Field(default=5.0, gt=0, description="Anti-windup bound, s*s")
    free_speed_mode: FreeSpeedMode = Field(default=FreeSpeedMode.FIXED)

    @field_validator("b_max")
    @classmethod
    def _fixed_brake(cls, value: float) -> float:
        if value != 10.0:
            raise ValueError("b_max is fixed at 10 m/s^2")
        return value

    @field_validator("jerk_limit")
    @classmethod
    def _fixed_jerk(cls, value: float) -> float:
        if value != 16.0:
            raise ValueError("jerk_limit is fixed at 16 m/s^3")
        return value


class ModelConfig(BaseModel):
    """Subject vehicle model selection."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(..., description="Registry name, e.g. idm_n, acc_aeb, stochastic:idm_m")
    params: Dict[str, Any] = Field(default_factory=dict, description="Parameter overrides")
    p_fail: float = Field(default=0.0, ge=0, le=1, description="Brake dropout for stochastic:*")
    brake: float = Field(default=10.0, gt=0, description="Braking for perfect_brake, m/s^2")
    accel: float = Field(default=0.73, description="Command for constant_accel, m/s^2")


class QuantConfig(BaseModel):
    """Inputs of one quantification."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epsilon: float = Field(default=0.01, gt=0, le=1)
    beta: float = Field(default=0.001, gt=0, le=1)
    delta: Delta = Field(default_factory=lambda: Delta(widths=(10.0, 6.0, 6.0)))
    bounds: StateBounds = Field(default_factory=StateBounds)
    sim: SimConfig = Field(default_factory=SimConfig)
    policy: LeadPolicy = Field(default_factory=LeadPolicy)
    seed: int = Field(default=0, ge=0)
    max_total_runs: Optional[int] = Field(
        default=None, gt=0, description="Safety cap; default 50 x required consecutive runs"
    )
    cascade_edges: bool = Field(
        default=False, description="Record edges between distinct covered cells of safe runs"
    )
    prune_visited_cells: bool = Field(
        default=False, description="Collisions also prune every cell their trajectory visits"
    )
    buffer_dedupe: bool = Field(
        default=True, description="Skip buffering a state whose lattice cell is already buffered"
    )
    normalize_distance: bool = Field(
        default=False, description="Scale nearest-centroid distances by the bounds range"
    )

    @model_validator(mode="after")
    def _bounds_agree(self) -> "QuantConfig":
        if self.sim.bounds != self.bounds:
            raise ValueError("sim.bounds must equal bounds")
        return self


class ExitReason(str, Enum):
    """Why a quantification stopped."""

    VALIDATED = "validated"
    EXHAUSTED_EMPTY = "exhausted_empty"
    RUN_CAP = "run_cap"


class SafeSetResult(BaseModel):
    """Final almost safe set of a quantification plus run statistics."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: Any = Field(..., description="Final CoveringGrid")
    total_runs: int = Field(..., ge=0)
    collision_runs: int = Field(..., ge=0)
    consecutive_safe_at_exit: int = Field(..., ge=0)
    required_runs: int = Field(..., ge=1)
    exit_reason: ExitReason
    config: QuantConfig
    seed: int
    model_name: str = Field(default="unknown")
    expansions: int = Field(default=0, description="Centroids added by set expansion")
    closure_violations: int = Field(default=0, description="Edges from active to removed cells")
    sigma_graph: Any = Field(default=None, exclude=True, description="Observed safe transitions")
    unsafe_graph: Any = Field(default=None, exclude=True, description="Transitions into failure")

    @model_validator(mode="after")
    def _validated_consistent(self) -> "SafeSetResult":
        if (
            self.exit_reason == ExitReason.VALIDATED
            and self.consecutive_safe_at_exit < self.required_runs
        ):
            raise ValueError("validated exit requires the full consecutive-run count")
        return self


class ViolationCause(str, Enum):
    """Why a validation failed."""

    COLLISION = "collision"
    LEFT_SET = "left_set"
    FAILURE_OVERLAP = "failure_overlap"


class Violation(BaseModel):
    """First observed violation during validation."""

    run_index: int
    step_index: int
    state: Vector3
    cause: ViolationCause


class ValidationReport(BaseModel):
    """Outcome of validating a covering set."""

    passed: bool
    runs_executed: int = Field(..., ge=0)
    required_runs: int = Field(..., ge=1)
    first_violation: Optional[Violation] = None


class RunLogEntry(BaseModel):
    """One line of a quantification run log."""

    run_index: int
    s0: Vector3
    outcome: TerminationCause
    trajectory_length: int
    active_cells: int
    buffer_size: int
    consecutive_safe: int


class NcapKind(str, Enum):
    """Car-to-car rear scenario categories."""

    CCRS = "CCRs"
    CCRM = "CCRm"
    CCRB = "CCRb"


class NcapScenario(BaseModel):
    """One concrete car-to-car rear scenario."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    kind: NcapKind
    v0_init: float = Field(..., ge=0, description="SV speed, m/s")
    v1_init: float = Field(..., ge=0, description="Lead speed, m/s")
    headway: float = Field(..., gt=0, description="Initial headway, m")
    lead_decel: float = Field(default=0.0, ge=0, description="Lead braking magnitude, m/s^2")
    lead_decel_duration: Optional[float] = Field(
        default=None, gt=0, description="Braking duration, s; None brakes to standstill"
    )

    @model_validator(mode="after")
    def _check_kind(self) -> "NcapScenario":
        if self.kind == NcapKind.CCRS and (self.v1_init != 0 or self.lead_decel != 0):
            raise ValueError(f"{self.id}: CCRs requires a stationary lead")
        if self.kind == NcapKind.CCRM and self.lead_decel != 0:
            raise ValueError(f"{self.id}: CCRm requires a constant-speed lead")
        if self.kind == NcapKind.CCRB and (self.lead_decel <= 0 or self.v1_init <= 0):
            raise ValueError(f"{self.id}: CCRb requires a moving lead that brakes")
        return self


class BatteryOutcome(str, Enum):
    """Outcome of one concrete scenario execution."""

    PASS = "pass"
    COLLISION = "collision"


class BatteryRow(BaseModel):
    """One execution of one battery scenario."""

    scenario_id: str
    kind: NcapKind
    v0_init: float
    v1_init: float
    headway: float
    lead_decel: float
    repeat: int
    outcome: BatteryOutcome
    steps: int


class SummaryRecord(BaseModel):
    """Multi-seed statistics of one (model, initialization, epsilon) group."""

    sv: str
    s0: str
    epsilon: float
    runs: int = Field(..., ge=1, description="Number of results aggregated")
    scenario_runs_mean: float
    scenario_runs_std: float
    collision_runs_mean: float
    collision_runs_std: float
    iou: float = Field(..., ge=0, le=1)


class DumpCell(BaseModel):
    """One active cell in a stored grid."""

    cell: CellId
    centroid: Vector3


class SafeSetDump(BaseModel):
    """Self-describing stored form of a covering grid and its run."""

    tool: str = Field(default="safeset-quantifier")
    version: str
    bounds: StateBounds
    delta: Delta
    normalize_distance: bool = False
    lattice_shape: CellId
    cells: List[DumpCell]
    active_centroids: List[Vector3]
    removed_cells: List[CellId]
    removed_count: int
    next_extra: int = 0
    seed: Optional[int] = None
    stats: Dict[str, Union[int, float, str]] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict, description="Configuration echo")


# --- run configuration file ------------------------------------------------------------


class StateSpaceSection(BaseModel):
    """State-space block of the run configuration."""

    model_config = ConfigDict(extra="forbid")

    bounds: StateBounds = Field(default_factory=StateBounds)
    delta: Delta = Field(default_factory=lambda: Delta(widths=(10.0, 6.0, 6.0)))
    collision_headway: float = Field(default=0.0)
    normalize_distance: bool = False


class SimulationSection(BaseModel):
    """Simulation block of the run configuration."""

    model_config = ConfigDict(extra="forbid")

    dt: float = Field(default=0.1, gt=0)
    K: int = Field(default=300, ge=2)
    headway_overflow: HeadwayOverflow = Field(default=HeadwayOverflow.CLIP)


class QuantificationSection(BaseModel):
    """Quantification block of the run configuration."""

    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(default=0.01, gt=0, le=1)
    beta: float = Field(default=0.001, gt=0, le=1)
    max_total_runs: Optional[int] = Field(default=None, gt=0)
    cascade_edges: bool = False
    prune_visited_cells: bool = False
    buffer_dedupe: bool = True


class ValidationSection(BaseModel):
    """Validation block of the run configuration."""

    model_config = ConfigDict(extra="forbid")

    epsilon: Optional[float] = Field(default=None, gt=0, le=1)
    beta: Optional[float] = Field(default=None, gt=0, le=1)
    seed: int = Field(default=12345, ge=0)


class OutputSection(BaseModel):
    """Output block of the run configuration."""

    model_config = ConfigDict(extra="forbid")

    directory: str = Field(default="results")
    trace: bool = False


class NcapSection(BaseModel):
    """NCAP battery block of the run configuration."""

    model_config = ConfigDict(extra="forbid")

    battery: str = Field(default="configs/ncap_battery.yaml")
    repeats: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)


class ExecutionSection(BaseModel):
    """Execution block of the run configuration."""

    model_config = ConfigDict(extra="forbid")

    parallel: bool = False
    max_workers: int = Field(default=4, ge=1)


class LoggingSection(BaseModel):
    """Logging block of the run configuration."""

    model_config = ConfigDict(extra="forbid")

    level: str = Field(default="INFO")
    file: Optional[str] = None
    console: bool = True


class RunConfigFile(BaseModel):
    """Schema of the YAML run configuration."""

    model_config = ConfigDict(extra="forbid")

    model: ModelConfig
    policy: LeadPolicy = Field(default_factory=LeadPolicy)
    state_space: StateSpaceSection = Field(default_factory=StateSpaceSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    quantification: QuantificationSection = Field(default_factory=QuantificationSection)
    validation: ValidationSection = Field(default_factory=ValidationSection)
    seeds: List[int] = Field(default_factory=lambda: [0])
    initialization: str = Field(default="full", description="'full' or a path to a dump")
    output: OutputSection = Field(default_factory=OutputSection)
    ncap: NcapSection = Field(default_factory=NcapSection)
    execution: ExecutionSection = Field(default_factory=ExecutionSection)
    logging: LoggingSection = Field(default_factory=LoggingSection)

    @field_validator("seeds")
    @classmethod
    def _seeds_valid(cls, seeds: List[int]) -> List[int]:
        if any(s < 0 for s in seeds):
            raise ValueError("seeds must be non-negative")
        return seeds

    def sim_config(self) -> SimConfig:
        """Build the SimConfig described by this file."""
        return SimConfig(
            dt=self.simulation.dt,
            K=self.simulation.K,
            bounds=self.state_space.bounds,
            collision_headway=self.state_space.collision_headway,
            headway_overflow=self.simulation.headway_overflow,
        )

    def quant_config(self, seed: int) -> QuantConfig:
        """Build the QuantConfig for one seed."""
        return QuantConfig(
            epsilon=self.quantification.epsilon,
            beta=self.quantification.beta,
            delta=self.state_space.delta,
            bounds=self.state_space.bounds,
            sim=self.sim_config(),
            policy=self.policy,
            seed=seed,
            max_total_runs=self.quantification.max_total_runs,
            cascade_edges=self.quantification.cascade_edges,
            prune_visited_cells=self.quantification.prune_visited_cells,
            buffer_dedupe=self.quantification.buffer_dedupe,
            normalize_distance=self.state_space.normalize_distance,
        )

    def initialization_path(self) -> Optional[Path]:
        """Return the warm-start dump path, or None for full-space initialization."""
        if self.initialization == "full":
            return None
        return Path(self.initialization)
