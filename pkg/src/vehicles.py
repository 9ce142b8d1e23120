"""
Subject vehicle (SV) models under test.

Every model is a black box that maps the observed state (and its own memory)
to a commanded longitudinal acceleration. Models register under string names
so run configurations can select them:

- idm_m / idm_n / idm_h: Intelligent Driver Model with 3 / 5 / 7 m/s^2 brake caps
- acc_aeb: PI time-headway ACC switched to jerk-limited AEB below a TTC threshold
- perfect_brake: constant full braking (analytic reference)
- constant_accel: constant command (analytic reference)
- stochastic:<inner>: brake-dropout wrapper around any registered model
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from pydantic import ValidationError

from exceptions import ConfigError, PreconditionError
from models import AccAebParams, FreeSpeedMode, IdmParams, ModelConfig, State

logger = logging.getLogger(__name__)

IDM_BRAKE_CAPS: Dict[str, float] = {"idm_m": 3.0, "idm_n": 5.0, "idm_h": 7.0}
STOCHASTIC_PREFIX = "stochastic:"


class SubjectVehicleModel(ABC):
    """Black-box controller of the following vehicle."""

    name: str = "model"

    def reset(self) -> None:
        """Clear per-run memory. Stateless models have nothing to clear."""

    @abstractmethod
    def accel(self, s: State, dt: float) -> float:
        """
        Commanded SV acceleration for the current observation.

        Parameters:
            s (State): Observed state.
            dt (float): Step period, s.

        Returns:
            float: Acceleration in m/s^2.
        """


# --- IDM ---------------------------------------------------------------------------------


def idm_accel_unclamped(p: IdmParams, s: State) -> float:
    """IDM acceleration before the [-b_cap, a_max] clamp."""
    gap = s.d - p.vehicle_length if p.subtract_vehicle_length else s.d
    gap = max(gap, p.gap_floor)
    s_star = (
        p.min_gap
        + s.v0 * p.time_headway
        + s.v0 * (s.v0 - s.v1) / (2.0 * math.sqrt(p.a_max * p.b_comf))
    )
    return p.a_max * (1.0 - (s.v0 / p.v_free) ** p.exponent - (s_star / gap) ** 2)


def idm_accel(p: IdmParams, s: State) -> float:
    """
    Intelligent Driver Model acceleration.

    The closing-speed term enters squared, so a large negative desired gap
    (lead much faster than the SV) also produces braking.

    Parameters:
        p (IdmParams): Model parameters.
        s (State): Observed state.

    Returns:
        float: Acceleration clamped to [-b_cap, a_max].
    """
    return min(max(idm_accel_unclamped(p, s), -p.b_cap), p.a_max)


class IdmModel(SubjectVehicleModel):
    """Stateless IDM follower."""

    def __init__(self, params: IdmParams, name: str = "idm"):
        self.params = params
        self.name = name

    def accel(self, s: State, dt: float) -> float:
        return idm_accel(self.params, s)


# --- ACC-AEB -----------------------------------------------------------------------------


@dataclass
class AccAebMemory:
    """Per-run memory of the ACC-AEB controller."""

    integral: float = 0.0
    prev_cmd: float = 0.0
    v_free: Optional[float] = None
    aeb_active: bool = False


def time_to_collision(s: State) -> float:
    """d / (v0 - v1) while closing, +inf otherwise."""
    closing = s.v0 - s.v1
    return s.d / closing if closing > 0 else math.inf


def acc_aeb_accel(p: AccAebParams, s: State, dt: float, memory: AccAebMemory) -> float:
    """
    One step of the switched ACC / AEB controller.

    Above the TTC threshold a PI loop on the time-headway error runs, capped by
    a speed-tracking term toward the free-traffic speed. At or below it the AEB
    targets full braking. Either way the command moves from the previous one by
    at most jerk_limit * dt.

    Parameters:
        p (AccAebParams): Controller parameters.
        s (State): Observed state.
        dt (float): Step period, s.
        memory (AccAebMemory): Integrator and previous command; updated in place.

    Returns:
        float: Commanded acceleration, m/s^2.
    """
    if memory.v_free is None:
        memory.v_free = (
            p.v_free if p.free_speed_mode == FreeSpeedMode.FIXED else max(p.v_free, s.v0)
        )

    if time_to_collision(s) > p.ttc_threshold:
        memory.aeb_active = False
        error = s.d / max(s.v0, p.v_eps) - p.desired_time_headway
        memory.integral = float(
            np.clip(memory.integral + error * dt, -p.integral_limit, p.integral_limit)
        )
        a_gap = p.kp * error + p.ki * memory.integral
        a_speed = p.k_speed * (memory.v_free - s.v0)
        target = min(max(min(a_gap, a_speed), -p.b_comf_acc), p.a_max_acc)
    else:
        memory.aeb_active = True
        target = -p.b_max

    max_change = p.jerk_limit * dt
    cmd = memory.prev_cmd + min(max(target - memory.prev_cmd, -max_change), max_change)
    memory.prev_cmd = cmd
    return cmd


class AccAebModel(SubjectVehicleModel):
    """ACC-AEB controller holding its memory per run."""

    def __init__(self, params: AccAebParams, name: str = "acc_aeb"):
        self.params = params
        self.name = name
        self.memory = AccAebMemory()

    def reset(self) -> None:
        self.memory = AccAebMemory()

    def accel(self, s: State, dt: float) -> float:
        return acc_aeb_accel(self.params, s, dt, self.memory)


# --- references and wrappers -------------------------------------------------------------


class PerfectBrakeModel(SubjectVehicleModel):
    """Always commands full braking."""

    def __init__(self, brake: float):
        if brake <= 0:
            raise PreconditionError(f"braking capability must be positive, got {brake}")
        self.brake = brake
        self.name = f"perfect_brake({brake:g})"

    def accel(self, s: State, dt: float) -> float:
        return -self.brake


class ConstantAccelModel(SubjectVehicleModel):
    """Always commands the same acceleration."""

    def __init__(self, accel: float):
        self.command = accel
        self.name = f"constant_accel({accel:g})"

    def accel(self, s: State, dt: float) -> float:
        return self.command


class StochasticWrapper(SubjectVehicleModel):
    """Drops braking commands of an inner model with a fixed probability."""

    def __init__(self, inner: SubjectVehicleModel, p_fail: float, rng: np.random.Generator):
        if not 0.0 <= p_fail <= 1.0:
            raise PreconditionError(f"p_fail must lie in [0, 1], got {p_fail}")
        self.inner = inner
        self.p_fail = p_fail
        self.rng = rng
        self.name = f"{STOCHASTIC_PREFIX}{inner.name}"
        self.braking_steps = 0
        self.dropouts = 0

    def reset(self) -> None:
        self.inner.reset()

    def accel(self, s: State, dt: float) -> float:
        command = self.inner.accel(s, dt)
        if command >= 0:
            return command
        self.braking_steps += 1
        if self.rng.random() < self.p_fail:
            self.dropouts += 1
            return 0.0
        return command


def stochastic_wrapper(
    inner: SubjectVehicleModel, p_fail: float, rng: np.random.Generator
) -> SubjectVehicleModel:
    """Wrap a model with per-step brake dropout of probability p_fail."""
    return StochasticWrapper(inner, p_fail, rng)


def perfect_brake_model(b: float) -> SubjectVehicleModel:
    """Reference model commanding -b at every step."""
    return PerfectBrakeModel(b)


# --- registry ----------------------------------------------------------------------------


def _build_idm(cfg: ModelConfig, rng: np.random.Generator) -> SubjectVehicleModel:
    params = {"b_cap": IDM_BRAKE_CAPS.get(cfg.name, 5.0), **cfg.params}
    return IdmModel(IdmParams(**params), name=cfg.name)


def _build_acc_aeb(cfg: ModelConfig, rng: np.random.Generator) -> SubjectVehicleModel:
    return AccAebModel(AccAebParams(**cfg.params), name=cfg.name)


MODEL_REGISTRY: Dict[str, Callable[[ModelConfig, np.random.Generator], SubjectVehicleModel]] = {
    "idm": _build_idm,
    "idm_m": _build_idm,
    "idm_n": _build_idm,
    "idm_h": _build_idm,
    "acc_aeb": _build_acc_aeb,
    "perfect_brake": lambda cfg, rng: PerfectBrakeModel(cfg.brake),
    "constant_accel": lambda cfg, rng: ConstantAccelModel(cfg.accel),
}


def build_model(cfg: ModelConfig, rng: Optional[np.random.Generator] = None) -> SubjectVehicleModel:
    """
    Instantiate a registered model.

    Parameters:
        cfg (ModelConfig): Model name and parameter overrides.
        rng (Optional[np.random.Generator]): Random source for stochastic wrappers.

    Returns:
        SubjectVehicleModel: Fresh instance.

    Raises:
        ConfigError: Unknown name or invalid parameters.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if cfg.name.startswith(STOCHASTIC_PREFIX):
        inner_cfg = cfg.model_copy(update={"name": cfg.name[len(STOCHASTIC_PREFIX):]})
        return stochastic_wrapper(build_model(inner_cfg, rng), cfg.p_fail, rng)

    builder = MODEL_REGISTRY.get(cfg.name)
    if builder is None:
        known = ", ".join(sorted(MODEL_REGISTRY)) + f", {STOCHASTIC_PREFIX}<name>"
        raise ConfigError(f"unknown model '{cfg.name}' (known: {known})")
    try:
        model = builder(cfg, rng)
    except (ValidationError, PreconditionError) as e:
        raise ConfigError(f"invalid parameters for model '{cfg.name}': {e}") from e
    logger.debug(f"Built model {model.name}")
    return model
