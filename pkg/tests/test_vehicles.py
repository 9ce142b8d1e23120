"""
Tests for the subject vehicle models.
"""

import math

import numpy as np
import pytest

from exceptions import ConfigError, PreconditionError
from models import AccAebParams, FreeSpeedMode, IdmParams, ModelConfig, State
from vehicles import (
    AccAebMemory,
    AccAebModel,
    IdmModel,
    StochasticWrapper,
    acc_aeb_accel,
    build_model,
    idm_accel,
    perfect_brake_model,
    stochastic_wrapper,
    time_to_collision,
)


def test_idm_free_road_acceleration():
    """A standing SV far behind a standing lead accelerates at nearly a_max."""
    assert idm_accel(IdmParams(), State(100.0, 0.0, 0.0)) == pytest.approx(0.7297, abs=1e-4)


def test_idm_m_brakes_behind_faster_lead():
    """M_IDM brakes at (40, 12, 25) despite the gap and the faster lead."""
    model = build_model(ModelConfig(name="idm_m"))
    assert model.accel(State(40.0, 12.0, 25.0), 0.1) < 0.0


@pytest.mark.parametrize("name,cap", [("idm_m", 3.0), ("idm_n", 5.0), ("idm_h", 7.0)])
def test_idm_variants_brake_caps(name, cap):
    """The variants differ only in their braking cap."""
    model = build_model(ModelConfig(name=name))
    assert isinstance(model, IdmModel)
    assert model.params.b_cap == cap
    assert model.accel(State(5.0, 30.0, 0.0), 0.1) == -cap


def test_idm_vehicle_length_convention():
    """Subtracting the vehicle length shrinks the gap and strengthens braking."""
    s = State(20.0, 10.0, 10.0)
    plain = idm_accel(IdmParams(b_cap=9.0), s)
    centered = idm_accel(IdmParams(b_cap=9.0, subtract_vehicle_length=True), s)
    assert centered < plain


def test_time_to_collision():
    """TTC is finite only while closing."""
    assert time_to_collision(State(20.0, 15.0, 5.0)) == pytest.approx(2.0)
    assert math.isinf(time_to_collision(State(20.0, 5.0, 5.0)))
    assert math.isinf(time_to_collision(State(20.0, 5.0, 15.0)))


def test_aeb_jerk_limited_ramp():
    """AEB moves the command by at most 1.6 m/s^2 per 0.1 s step toward -10."""
    params = AccAebParams()
    memory = AccAebMemory()
    s = State(5.0, 20.0, 0.0)
    commands = [acc_aeb_accel(params, s, 0.1, memory) for _ in range(8)]
    assert commands[0] == pytest.approx(-1.6)
    assert memory.aeb_active
    assert all(b >= a - 1.6 - 1e-9 for a, b in zip(commands, commands[1:]))
    first_full = next(k for k, c in enumerate(commands) if c <= -10.0 + 1e-9)
    assert (first_full + 1) * 0.1 >= 0.625
    assert commands[-1] == pytest.approx(-10.0)


def test_acc_follows_with_bounded_command():
    """Above the TTC threshold the ACC command stays within its caps."""
    params = AccAebParams()
    memory = AccAebMemory()
    command = acc_aeb_accel(params, State(60.0, 20.0, 20.0), 0.1, memory)
    assert not memory.aeb_active
    assert -params.b_comf_acc <= command <= params.a_max_acc
    assert abs(command) <= 1.6 + 1e-9


def test_acc_aeb_reset_clears_memory():
    """reset() restores a fresh controller."""
    model = AccAebModel(AccAebParams())
    s = State(5.0, 20.0, 0.0)
    first = model.accel(s, 0.1)
    model.accel(s, 0.1)
    model.reset()
    assert model.accel(s, 0.1) == first


def test_free_speed_at_least_initial():
    """The cruise speed is raised to the first observed SV speed when requested."""
    memory = AccAebMemory()
    params = AccAebParams(v_free=20.0, free_speed_mode=FreeSpeedMode.AT_LEAST_INITIAL)
    acc_aeb_accel(params, State(90.0, 25.0, 25.0), 0.1, memory)
    assert memory.v_free == 25.0

    fixed = AccAebMemory()
    acc_aeb_accel(AccAebParams(v_free=20.0), State(90.0, 25.0, 25.0), 0.1, fixed)
    assert fixed.v_free == 20.0


def test_perfect_brake_model():
    """The reference model always commands full braking."""
    model = perfect_brake_model(10.0)
    assert model.accel(State(50.0, 10.0, 10.0), 0.1) == -10.0
    with pytest.raises(PreconditionError):
        perfect_brake_model(0.0)


def test_stochastic_wrapper_drops_brakes():
    """With p_fail = 1 every braking command is replaced by zero."""
    inner = perfect_brake_model(10.0)
    always = stochastic_wrapper(inner, 1.0, np.random.default_rng(0))
    never = stochastic_wrapper(inner, 0.0, np.random.default_rng(0))
    s = State(50.0, 10.0, 10.0)
    assert always.accel(s, 0.1) == 0.0
    assert never.accel(s, 0.1) == -10.0
    assert isinstance(always, StochasticWrapper)
    assert always.dropouts == 1


def test_stochastic_wrapper_dropout_frequency():
    """Braking commands are dropped at the configured rate."""
    model = stochastic_wrapper(perfect_brake_model(10.0), 0.1, np.random.default_rng(11))
    s = State(50.0, 10.0, 10.0)
    commands = np.array([model.accel(s, 0.1) for _ in range(10_000)])

    assert model.braking_steps == 10_000
    assert model.dropouts == int(np.sum(commands == 0.0))
    assert set(np.unique(commands).tolist()) == {-10.0, 0.0}
    assert model.dropouts / model.braking_steps == pytest.approx(0.1, abs=0.01)


def test_stochastic_wrapper_leaves_acceleration():
    """Non-braking commands pass through without drawing randomness."""
    model = build_model(ModelConfig(name="stochastic:constant_accel", p_fail=1.0, accel=0.5))
    assert model.accel(State(50.0, 10.0, 10.0), 0.1) == 0.5
    assert model.braking_steps == 0


def test_stochastic_wrapper_rejects_bad_probability():
    """p_fail outside [0, 1] is rejected."""
    with pytest.raises(PreconditionError):
        stochastic_wrapper(perfect_brake_model(10.0), 1.5, np.random.default_rng(0))


def test_build_model_registry():
    """Registered names build models; unknown names and bad parameters are config errors."""
    assert build_model(ModelConfig(name="acc_aeb")).name == "acc_aeb"
    assert build_model(ModelConfig(name="stochastic:idm_m", p_fail=0.02)).name == "stochastic:idm_m"
    assert build_model(ModelConfig(name="perfect_brake", brake=8.0)).accel(
        State(50.0, 5.0, 5.0), 0.1
    ) == -8.0
    with pytest.raises(ConfigError):
        build_model(ModelConfig(name="openpilot"))
    with pytest.raises(ConfigError):
        build_model(ModelConfig(name="acc_aeb", params={"b_max": 6.0}))
    with pytest.raises(ConfigError):
        build_model(ModelConfig(name="idm_n", params={"headway": 1.0}))
