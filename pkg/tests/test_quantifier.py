"""
Tests for almost-safe-set quantification and validation.
"""

import numpy as np
import pytest

from analyzer import escape_rate, iou, volume
from exceptions import ConfigError, GridMismatchError, PreconditionError
from grid import make_covering_grid
from models import (
    Delta,
    ExitReason,
    LeadPolicy,
    ModelConfig,
    QuantConfig,
    SimConfig,
    TerminationCause,
    ViolationCause,
)
from quantifier import (
    SafeSetQuantifier,
    pruning_closure_violations,
    quantify,
    required_consecutive_runs,
    validate,
)
from simulator import run_scenario
from vehicles import ConstantAccelModel, PerfectBrakeModel, build_model


@pytest.mark.parametrize(
    "epsilon,beta,expected",
    [(0.01, 0.001, 688), (0.1, 0.001, 66), (0.5, 0.5, 1), (1.0, 0.001, 1), (0.1, 0.1, 22)],
)
def test_required_consecutive_runs(epsilon, beta, expected):
    """Run counts are ceil(ln beta / ln(1 - epsilon)), at least one."""
    assert required_consecutive_runs(epsilon, beta) == expected


@pytest.mark.parametrize("epsilon,beta", [(0.0, 0.1), (1.5, 0.1), (0.1, 0.0), (0.1, -0.5)])
def test_required_consecutive_runs_rejects_out_of_range(epsilon, beta):
    """Both arguments must lie in (0, 1]."""
    with pytest.raises(PreconditionError):
        required_consecutive_runs(epsilon, beta)


def test_all_safe_system_validates_in_required_runs(small_quant_config):
    """A system that never escapes validates after exactly the required runs."""
    cfg = small_quant_config()
    result = quantify(cfg, PerfectBrakeModel(10.0))
    assert result.exit_reason == ExitReason.VALIDATED
    assert result.total_runs == result.required_runs == 22
    assert result.collision_runs == 0
    assert result.grid.active_count == 5
    assert result.consecutive_safe_at_exit == result.required_runs


def test_always_accelerating_model_exhausts_set(coarse_quant_config):
    """A model that never brakes empties the set without ever validating."""
    result = quantify(coarse_quant_config(), ConstantAccelModel(0.73))
    assert result.exit_reason == ExitReason.EXHAUSTED_EMPTY
    assert result.grid.is_empty()
    assert result.collision_runs == result.total_runs
    assert result.total_runs <= 45
    assert len(result.unsafe_graph.edges) > 0


def test_run_cap(small_quant_config, mocker):
    """The loop stops at max_total_runs when validation never completes."""
    mocker.patch.object(
        SafeSetQuantifier, "_explore", lambda self, *args: setattr(self, "consecutive", 0)
    )
    result = quantify(small_quant_config(max_total_runs=30), PerfectBrakeModel(10.0))
    assert result.exit_reason == ExitReason.RUN_CAP
    assert result.total_runs == 30


def test_run_cap_must_exceed_required(small_quant_config):
    """A run cap at or below the required count is a configuration error."""
    with pytest.raises(ConfigError):
        quantify(small_quant_config(max_total_runs=22), PerfectBrakeModel(10.0))


def test_default_run_cap(small_quant_config):
    """Without an explicit cap the loop allows 50 x the required runs."""
    quantifier = SafeSetQuantifier(small_quant_config(), PerfectBrakeModel(10.0))
    assert quantifier.max_total_runs == 50 * 22


def test_failure_cells_excluded_up_front(small_quant_config, small_bounds):
    """Cells whose neighborhood reaches the failure set never enter the set."""
    sim = SimConfig(K=50, bounds=small_bounds, collision_headway=5.0)
    result = quantify(small_quant_config(sim=sim), PerfectBrakeModel(10.0))
    assert not result.grid.is_active((0, 0, 0))
    assert result.grid.active_count == 4


def test_quantify_is_deterministic(coarse_quant_config, stationary_lead):
    """Identical configuration and seed give identical results."""
    cfg = coarse_quant_config(policy=stationary_lead, seed=11)
    first = quantify(cfg, PerfectBrakeModel(5.0))
    second = quantify(cfg, PerfectBrakeModel(5.0))
    assert first.grid == second.grid
    assert (first.total_runs, first.collision_runs) == (second.total_runs, second.collision_runs)


def test_pruning_leaves_no_edge_into_removed_cells(coarse_quant_config, stationary_lead):
    """No safe-graph edge leads from an active cell into a removed cell."""
    result = quantify(coarse_quant_config(policy=stationary_lead, seed=4), PerfectBrakeModel(5.0))
    assert result.collision_runs > 0
    assert result.closure_violations == 0
    assert pruning_closure_violations(result.grid, result.sigma_graph) == []


def test_run_log_callback(small_quant_config):
    """The callback receives one entry per run, in order."""
    entries = []
    traces = []
    result = quantify(
        small_quant_config(),
        PerfectBrakeModel(10.0),
        on_run=entries.append,
        on_trajectory=lambda index, trajectory: traces.append(index),
    )
    assert [e.run_index for e in entries] == list(range(result.total_runs))
    assert traces == list(range(result.total_runs))
    assert all(e.outcome == TerminationCause.HORIZON for e in entries)
    assert entries[-1].consecutive_safe == result.required_runs


def test_warm_start_is_copied(small_quant_config, small_grid):
    """The warm-start grid is not mutated by quantification."""
    small_grid.remove((4, 0, 0))
    result = quantify(small_quant_config(), PerfectBrakeModel(10.0), initial_grid=small_grid)
    assert result.grid is not small_grid
    assert not small_grid.is_active((4, 0, 0))


def test_warm_start_must_match_delta(small_quant_config, small_bounds):
    """A warm-start grid over another delta is rejected."""
    other = make_covering_grid(small_bounds, Delta(widths=(20.0, 5.0, 5.0)))
    with pytest.raises(GridMismatchError):
        quantify(small_quant_config(), PerfectBrakeModel(10.0), initial_grid=other)


def _run_from(quantifier, cell):
    cfg = quantifier.cfg
    s0 = quantifier.grid.centroid(cell)
    return run_scenario(quantifier.model, cfg.policy, s0, cfg.sim, quantifier.rng)


def test_collision_prunes_start_cell_only(coarse_quant_config, stationary_lead):
    """A colliding run removes its start cell but not the cells it passes through."""
    quantifier = SafeSetQuantifier(
        coarse_quant_config(policy=stationary_lead), PerfectBrakeModel(10.0)
    )
    trajectory = _run_from(quantifier, (1, 2, 0))
    assert trajectory.collided

    quantifier._prune(trajectory, (1, 2, 0))
    assert quantifier.grid.active_count == 44
    assert not quantifier.grid.is_active((1, 2, 0))
    assert quantifier.grid.is_active((0, 2, 0))
    assert quantifier.grid.is_active((0, 1, 0))
    assert len(quantifier.buffer) > 0
    assert quantifier.consecutive == 0
    assert len(quantifier.unsafe_graph.edges) > 0


def test_collision_prunes_visited_cells_when_enabled(coarse_quant_config, stationary_lead):
    """With prune_visited_cells every cell the colliding run visits is removed."""
    quantifier = SafeSetQuantifier(
        coarse_quant_config(policy=stationary_lead, prune_visited_cells=True),
        PerfectBrakeModel(10.0),
    )
    trajectory = _run_from(quantifier, (1, 2, 0))
    quantifier._prune(trajectory, (1, 2, 0))
    for cell in ((1, 2, 0), (0, 2, 0), (0, 1, 0)):
        assert not quantifier.grid.is_active(cell), cell


def test_safe_run_expands_into_removed_regions(coarse_quant_config, stationary_lead):
    """Unowned states of a safe run become centroids once, in their own region."""
    quantifier = SafeSetQuantifier(
        coarse_quant_config(policy=stationary_lead), PerfectBrakeModel(10.0)
    )
    for cell in ((1, 2, 0), (0, 1, 0)):
        quantifier.grid.remove(cell)
    trajectory = _run_from(quantifier, (2, 2, 0))
    assert not trajectory.collided

    quantifier._explore(trajectory, (2, 2, 0))
    grid = quantifier.grid
    extras = [c for c in grid.active_cells() if not grid.is_lattice(c)]
    assert quantifier.expansions == len(extras) > 0
    assert {grid.snap(grid.centroid(c)) for c in extras} == {(1, 2, 0), (0, 1, 0)}
    assert all(quantifier.sigma_graph.ancestors(c) >= {(2, 2, 0)} for c in extras)
    assert quantifier.consecutive == 0

    quantifier._explore(trajectory, (2, 2, 0))
    assert quantifier.expansions == len(extras)
    assert quantifier.consecutive == 1


def test_warm_start_keeps_lattice_cells_only(coarse_quant_config, coarse_grid):
    """Expansion centroids of a warm-start set are dropped; its lattice cells stay."""
    coarse_grid.remove((2, 1, 1))
    coarse_grid.add_centroid(coarse_grid.centroid((2, 1, 1)))
    quantifier = SafeSetQuantifier(
        coarse_quant_config(), PerfectBrakeModel(10.0), initial_grid=coarse_grid
    )
    assert quantifier.grid.active_count == 44
    assert all(quantifier.grid.is_lattice(c) for c in quantifier.grid.active_cells())
    assert coarse_grid.active_count == 45


# --- validate ---------------------------------------------------------------------------


def test_validate_passes_on_safe_set(small_grid, small_sim, cruising_lead):
    """A set no run escapes passes after the required runs."""
    report = validate(
        small_grid, PerfectBrakeModel(10.0), cruising_lead, 0.1, 0.1, small_sim,
        np.random.default_rng(0),
    )
    assert report.passed
    assert report.runs_executed == report.required_runs == 22
    assert report.first_violation is None


def test_validate_detects_failure_overlap(small_grid, small_bounds, cruising_lead):
    """A set reaching into the failure set fails before any run."""
    sim = SimConfig(K=50, bounds=small_bounds, collision_headway=5.0)
    report = validate(
        small_grid, PerfectBrakeModel(10.0), cruising_lead, 0.1, 0.1, sim,
        np.random.default_rng(0),
    )
    assert not report.passed
    assert report.runs_executed == 0
    assert report.first_violation.cause == ViolationCause.FAILURE_OVERLAP
    assert report.first_violation.state == (10.0, 5.0, 5.0)


def test_validate_detects_leaving_the_set(small_grid, small_sim, cruising_lead):
    """A run whose headway grows out of a one-cell set leaves it."""
    small_grid.restrict_to({(0, 0, 0)})
    report = validate(
        small_grid, PerfectBrakeModel(10.0), cruising_lead, 0.1, 0.1, small_sim,
        np.random.default_rng(0),
    )
    assert not report.passed
    assert report.runs_executed == 1
    violation = report.first_violation
    assert violation.cause == ViolationCause.LEFT_SET
    assert violation.state[0] > 20.0


def test_validate_detects_collision(small_grid, small_sim, stationary_lead):
    """A run ending in collision is reported with its final state."""
    small_grid.restrict_to({(0, 0, 0)})
    report = validate(
        small_grid, ConstantAccelModel(0.0), stationary_lead, 0.1, 0.1, small_sim,
        np.random.default_rng(0),
    )
    assert not report.passed
    assert report.runs_executed == 1
    assert report.first_violation.cause == ViolationCause.COLLISION
    assert report.first_violation.state[0] == 0.0


def test_validate_rejects_empty_set(small_grid, small_sim, cruising_lead):
    """An empty set cannot be validated."""
    small_grid.restrict_to(set())
    with pytest.raises(PreconditionError):
        validate(
            small_grid, PerfectBrakeModel(10.0), cruising_lead, 0.1, 0.1, small_sim,
            np.random.default_rng(0),
        )


# --- acceptance experiments -------------------------------------------------------------


def _stopping_margin(s) -> float:
    return s.d - s.v0 ** 2 / 20.0


def _chebyshev(a, b) -> int:
    return max(abs(x - y) for x, y in zip(a, b))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_perfect_brake_set_matches_stopping_kernel(bounds, coarse_delta, stationary_lead, seed):
    """Against a stationary lead the kept lattice is exactly the cells with v0^2 / 20 < d."""
    lattice = make_covering_grid(bounds, coarse_delta)
    kernel = {c for c in lattice.active_cells() if _stopping_margin(lattice.centroid(c)) > 0.0}
    assert len(kernel) == 36

    cfg = QuantConfig(
        epsilon=0.01, beta=0.001, delta=coarse_delta, bounds=bounds,
        sim=SimConfig(bounds=bounds), policy=stationary_lead, seed=seed,
    )
    result = quantify(cfg, PerfectBrakeModel(10.0))
    grid = result.grid
    assert result.exit_reason == ExitReason.VALIDATED
    assert result.closure_violations == 0
    assert result.collision_runs == 45 - len(kernel)

    kept = {c for c in grid.active_cells() if grid.is_lattice(c)}
    assert kept == kernel

    # expansion only fills regions one layer outside the kernel
    for cell in grid.snapped_cells() - kernel:
        assert min(_chebyshev(cell, k) for k in kernel) <= 1, cell


def _idm_config(bounds, delta, seed, **overrides):
    values = dict(
        epsilon=0.01, beta=0.001, delta=delta, bounds=bounds, sim=SimConfig(bounds=bounds),
        policy=LeadPolicy(), seed=seed,
    )
    values.update(overrides)
    return QuantConfig(**values)


def _idm_batch(name, bounds, delta, initial_grid=None):
    return [
        quantify(
            _idm_config(bounds, delta, seed),
            build_model(ModelConfig(name=name)),
            initial_grid=initial_grid,
        )
        for seed in range(5)
    ]


@pytest.mark.slow
def test_idm_set_ordering_budget_and_iou(bounds, coarse_delta):
    """Weaker brakes give smaller sets; runs stay within budget and seeds agree."""
    results = {name: _idm_batch(name, bounds, coarse_delta) for name in ("idm_m", "idm_n", "idm_h")}
    volumes = {name: [volume(r.grid)[0] for r in batch] for name, batch in results.items()}
    for m, n, h in zip(volumes["idm_m"], volumes["idm_n"], volumes["idm_h"]):
        assert m < n < h, volumes

    for name, batch in results.items():
        assert all(r.exit_reason == ExitReason.VALIDATED for r in batch), name
        assert all(r.total_runs < 3000 for r in batch), name
        assert all(r.closure_violations == 0 for r in batch), name
        assert iou(batch) >= 0.95, name
        assert np.std([r.collision_runs for r in batch], ddof=1) <= 2.0, name


@pytest.mark.slow
def test_warm_start_from_larger_set_needs_fewer_collisions(bounds, coarse_delta):
    """Starting from the H_IDM set cuts the collision runs of weaker variants."""
    h_grid = _idm_batch("idm_h", bounds, coarse_delta)[0].grid
    for name in ("idm_n", "idm_m"):
        full = _idm_batch(name, bounds, coarse_delta)
        warm = _idm_batch(name, bounds, coarse_delta, initial_grid=h_grid)
        assert np.mean([r.collision_runs for r in warm]) < np.mean(
            [r.collision_runs for r in full]
        ), name
        assert all(r.closure_violations == 0 for r in warm)


@pytest.mark.slow
def test_validated_set_bounds_stochastic_escape_rate(bounds, coarse_delta):
    """Sets validated at epsilon = 0.1 escape at most at that rate, up to sampling noise."""
    epsilon = 0.1
    runs = 10_000
    threshold = epsilon + 3.0 * np.sqrt(epsilon / runs)
    passed = 0
    for trial in range(20):
        model = build_model(
            ModelConfig(name="stochastic:idm_n", p_fail=0.02), np.random.default_rng([trial, 1])
        )
        cfg = _idm_config(bounds, coarse_delta, trial, epsilon=epsilon, max_total_runs=20_000)
        result = quantify(cfg, model)
        assert result.exit_reason == ExitReason.VALIDATED, trial
        rate = escape_rate(
            result.grid, model, cfg.policy, cfg.sim, runs, np.random.default_rng([trial, 2])
        )
        passed += rate <= threshold
    assert passed >= 19
