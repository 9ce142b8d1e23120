"""
Shared fixtures for the safe-set quantification tests.
"""

import pytest

from grid import make_covering_grid
from models import Delta, LeadPolicy, LeadPolicyKind, QuantConfig, SimConfig, StateBounds


@pytest.fixture
def bounds():
    """Default state-space box: d in [0, 100], speeds in [0, 30]."""
    return StateBounds()


@pytest.fixture
def coarse_delta():
    return Delta(widths=(10.0, 6.0, 6.0))


@pytest.fixture
def fine_delta():
    return Delta(widths=(10.0, 2.0, 2.0))


@pytest.fixture
def coarse_grid(bounds, coarse_delta):
    """The 45-cell grid."""
    return make_covering_grid(bounds, coarse_delta)


@pytest.fixture
def small_bounds():
    """Low-speed box whose lattice has a single cell per speed dimension."""
    return StateBounds(upper=(100.0, 10.0, 10.0))


@pytest.fixture
def small_delta():
    return Delta(widths=(10.0, 5.0, 5.0))


@pytest.fixture
def small_grid(small_bounds, small_delta):
    """Five cells stacked along the headway, centroids (10..90, 5, 5)."""
    return make_covering_grid(small_bounds, small_delta)


@pytest.fixture
def small_sim(small_bounds):
    return SimConfig(K=50, bounds=small_bounds)


@pytest.fixture
def cruising_lead():
    return LeadPolicy(kind=LeadPolicyKind.CONSTANT_SPEED)


@pytest.fixture
def stationary_lead():
    return LeadPolicy(kind=LeadPolicyKind.STATIONARY)


@pytest.fixture
def small_quant_config(small_bounds, small_delta, small_sim, cruising_lead):
    """Factory for quantification configs over the small box."""

    def factory(**overrides):
        values = dict(
            epsilon=0.1,
            beta=0.1,
            delta=small_delta,
            bounds=small_bounds,
            sim=small_sim,
            policy=cruising_lead,
            seed=0,
        )
        values.update(overrides)
        return QuantConfig(**values)

    return factory


@pytest.fixture
def coarse_quant_config(bounds, coarse_delta):
    """Factory for quantification configs over the 45-cell grid."""

    def factory(**overrides):
        values = dict(
            epsilon=0.1,
            beta=0.1,
            delta=coarse_delta,
            bounds=bounds,
            sim=SimConfig(bounds=bounds),
            seed=0,
        )
        values.update(overrides)
        return QuantConfig(**values)

    return factory
