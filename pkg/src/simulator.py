"""
Two-vehicle longitudinal scenario simulator.

Steps the headway and both speeds under the SV model's command and the lead
vehicle's testing policy, and stops at collision or after K steps.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from exceptions import PreconditionError
from models import (
    HeadwayOverflow,
    LeadPolicy,
    LeadPolicyKind,
    SimConfig,
    State,
    TerminationCause,
)
from vehicles import SubjectVehicleModel

logger = logging.getLogger(__name__)

Disturbance = Callable[[np.random.Generator], float]

TRACE_COLUMNS = ("t", "d", "v0", "v1", "a_sv", "a_pov")


@dataclass
class Trajectory:
    """One run of a scenario."""

    states: List[State]
    terminated_by: TerminationCause
    clipped: bool = False
    dt: float = 0.1
    a_sv: List[float] = field(default_factory=list)
    a_pov: List[float] = field(default_factory=list)

    @property
    def collided(self) -> bool:
        return self.terminated_by == TerminationCause.COLLISION

    def __len__(self) -> int:
        return len(self.states)

    def trace_rows(self) -> Iterator[Tuple[float, float, float, float, float, float]]:
        """Rows of (t, d, v0, v1, a_sv, a_pov); the last state has no command."""
        for k, s in enumerate(self.states):
            a_sv = self.a_sv[k] if k < len(self.a_sv) else 0.0
            a_pov = self.a_pov[k] if k < len(self.a_pov) else 0.0
            yield (round(k * self.dt, 10), s.d, s.v0, s.v1, a_sv, a_pov)


def lead_acceleration(policy: LeadPolicy, s: State, t: float) -> float:
    """
    Commanded lead acceleration at time t.

    Parameters:
        policy (LeadPolicy): Testing policy.
        s (State): Current state.
        t (float): Time since scenario start, s.

    Returns:
        float: Acceleration in m/s^2.
    """
    if policy.kind == LeadPolicyKind.CONSTANT_DECEL:
        return policy.a_brake
    if policy.kind == LeadPolicyKind.PIECEWISE_PROFILE:
        elapsed = 0.0
        for segment in policy.profile:
            elapsed += segment.duration
            if t < elapsed:
                return segment.acceleration
    return 0.0


def _advance(
    s: State, a_sv: float, a_pov: float, cfg: SimConfig, lead_stationary: bool = False
) -> Tuple[State, float]:
    """Integrate one step; return the headway-clipped state and the raw headway."""
    dt = cfg.dt
    bounds = cfg.bounds
    v0 = min(max(s.v0 + a_sv * dt, 0.0), bounds.v0_max)
    v1 = 0.0 if lead_stationary else min(max(s.v1 + a_pov * dt, 0.0), bounds.v1_max)
    raw_d = s.d + (0.5 * (s.v1 + v1) - 0.5 * (s.v0 + v0)) * dt
    return State(min(raw_d, bounds.d_max), v0, v1), raw_d


def step_dynamics(s: State, a_sv: float, a_pov: float, cfg: SimConfig) -> State:
    """
    Advance the state by one step.

    Speeds use explicit Euler and are clamped to [0, v_max]; the headway uses
    the average speed of each vehicle over the step and is clipped at d_max.
    A result with d at or below the collision headway signals collision.

    Parameters:
        s (State): Current state.
        a_sv (float): SV acceleration, m/s^2.
        a_pov (float): Lead acceleration, m/s^2.
        cfg (SimConfig): Step period and bounds.

    Returns:
        State: Next state.
    """
    return _advance(s, a_sv, a_pov, cfg)[0]


def run_scenario(
    model: SubjectVehicleModel,
    policy: LeadPolicy,
    s0: State,
    cfg: SimConfig,
    rng: Optional[np.random.Generator] = None,
    disturbance: Optional[Disturbance] = None,
) -> Trajectory:
    """
    Execute one run of a scenario from s0.

    The model is reset first. Each step queries the model and the policy,
    integrates, and records the state. The run ends at the first state with
    d <= collision_headway (recorded with d set to the collision headway), at
    the first headway overflow in truncate mode, or after K steps.

    Parameters:
        model (SubjectVehicleModel): SV controller under test.
        policy (LeadPolicy): Lead testing policy.
        s0 (State): Initial state, outside the failure set.
        cfg (SimConfig): Simulation parameters.
        rng (Optional[np.random.Generator]): Random source for the disturbance.
        disturbance (Optional[Disturbance]): Per-step additive SV acceleration.

    Returns:
        Trajectory: Recorded run.

    Raises:
        PreconditionError: If s0 is in the failure set.
    """
    if s0.d <= cfg.collision_headway:
        raise PreconditionError(
            f"initial headway {s0.d} is inside the failure set (d <= {cfg.collision_headway})"
        )
    if disturbance is not None and rng is None:
        raise PreconditionError("a disturbance requires a random source")

    model.reset()
    stationary = policy.kind == LeadPolicyKind.STATIONARY
    trajectory = Trajectory(states=[s0], terminated_by=TerminationCause.HORIZON, dt=cfg.dt)
    s = s0
    for k in range(cfg.K):
        a_sv = model.accel(s, cfg.dt)
        if disturbance is not None:
            a_sv += disturbance(rng)
        a_pov = lead_acceleration(policy, s, k * cfg.dt)
        trajectory.a_sv.append(a_sv)
        trajectory.a_pov.append(a_pov)

        s, raw_d = _advance(s, a_sv, a_pov, cfg, stationary)
        if s.d <= cfg.collision_headway:
            trajectory.states.append(s._replace(d=cfg.collision_headway))
            trajectory.terminated_by = TerminationCause.COLLISION
            break
        if raw_d > cfg.bounds.d_max:
            trajectory.clipped = True
            if cfg.headway_overflow == HeadwayOverflow.TRUNCATE:
                trajectory.states.append(s)
                trajectory.terminated_by = TerminationCause.TRUNCATED
                break
        trajectory.states.append(s)

    return trajectory


def gaussian_disturbance(sigma: float) -> Disturbance:
    """Zero-mean Gaussian SV acceleration noise with standard deviation sigma."""
    return lambda rng: float(rng.normal(0.0, sigma))
