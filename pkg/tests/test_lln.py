import numpy as np
import pytest

from patchsis import ContinuousState, ValidationError, make_model
from patchsis.errors import GridOutOfRange, InsufficientData
from patchsis.equilibria import dfe
from patchsis.lln import (
    Cell, LlnStudyConfig, aggregate, convergence_study, default_threads, rate_fit, sup_distance,
)
from patchsis.ode import ContinuousTrajectory, OdeConfig, integrate
from patchsis.ssa import ScaledTrajectory


def const_det(z, t_max, n=11):
    times = np.linspace(0, t_max, n)
    return ContinuousTrajectory(times, np.tile(np.asarray(z, float), (n, 1)), "const", 0, 0)


def test_identical_trajectories():
    m = make_model([2, 1.5], [1, 1], [[0, 1], [1, 0]], 0.1, 0.1)
    det = integrate(m, [0.4, 0.4, 0.1, 0.1], OdeConfig(5.0))
    stoch = ScaledTrajectory(det.times, det.values, 5.0)
    assert sup_distance(stoch, det) == 0.0


def test_single_jump():
    # N = 10, one infection moves 1/N from s to i: L1 change 2/N
    stoch = ScaledTrajectory(np.array([0.0, 0.4]), np.array([[0.5, 0.5], [0.4, 0.6]]), 1.0)
    d = sup_distance(stoch, const_det([0.5, 0.5], 1.0))
    assert d >= 2 / 10 - 1e-15
    assert d == pytest.approx(0.2)


def test_frozen_tail_distance_is_constant():
    frozen = np.array([0.45, 0.0, 0.55, 0.0])
    stoch = ScaledTrajectory(np.array([0.0, 1.0, 2.5]), np.array([[0.4, 0.1, 0.4, 0.1],
                                                                  [0.45, 0.05, 0.5, 0.0],
                                                                  frozen]), 10.0)
    det = const_det(dfe(2).as_vector(), 10.0, 101)
    tail = det.times[det.times >= 2.5]
    expected = np.abs(frozen - dfe(2).as_vector()).sum()
    for t in tail:
        assert sup_distance(stoch, det, [t]) == pytest.approx(expected, abs=1e-15)


def test_grid_out_of_range():
    stoch = ScaledTrajectory(np.array([0.0]), np.array([[0.5, 0.5]]), 1.0)
    with pytest.raises(GridOutOfRange):
        sup_distance(stoch, const_det([0.5, 0.5], 1.0), [0.0, 2.0])
    with pytest.raises(GridOutOfRange):
        sup_distance(ScaledTrajectory(np.array([0.0]), np.array([[0.5, 0.5]]), 3.0),
                     const_det([0.5, 0.5], 1.0), [0.0, 2.0])
    with pytest.raises(GridOutOfRange):
        sup_distance(stoch, const_det([0.5, 0.5], 1.0), [])


def test_rate_fit_exact_power_law():
    ns = [100, 1000, 10000, 100000]
    fit = rate_fit([(n, 3.0 * n ** -0.5) for n in ns])
    assert abs(fit.slope + 0.5) < 1e-12
    assert abs(fit.intercept - np.log(3.0)) < 1e-12
    assert fit.residual < 1e-12
    assert abs(rate_fit([(n, 0.2) for n in ns]).slope) < 1e-14


def test_rate_fit_needs_three_points():
    with pytest.raises(InsufficientData):
        rate_fit([(10, 0.1), (100, 0.03)])
    with pytest.raises(InsufficientData):
        rate_fit([(10, 0.1), (100, 0.0), (1000, float("nan"))])


def test_config_validation():
    with pytest.raises(ValidationError):
        LlnStudyConfig([100, 100], 5, 1.0)
    with pytest.raises(ValidationError):
        LlnStudyConfig([1000, 100], 5, 1.0)
    with pytest.raises(ValidationError):
        LlnStudyConfig([100], 0, 1.0)
    with pytest.raises(ValidationError):
        LlnStudyConfig([100], 1, 0.0)
    assert LlnStudyConfig([10], 1, 10.0).spacing == 0.05


def test_aggregate_counts_failures():
    cells = [Cell(10, 0, 0.3), Cell(10, 1, 0.1), Cell(10, 2, None, error="boom"), Cell(20, 0, None, error="x")]
    agg = aggregate(cells, [10, 20])
    assert agg[0].median == pytest.approx(0.2) and agg[0].completed == 2 and agg[0].failed == 1
    assert agg[1].completed == 0 and np.isnan(agg[1].median)


def test_zero_dynamics_gives_zero_error():
    # I = 0 and no migration: no channel can fire, both sides stay constant
    m = make_model([2.0, 3.0], [1, 1], [[0, 1], [1, 0]], 0.0, 0.0)
    x0 = ContinuousState([0.25, 0.75], [0.0, 0.0])
    res = convergence_study(m, x0, LlnStudyConfig([4, 100, 1000], 2, 5.0, master_seed=3))
    assert all(c.sup_error == 0.0 and c.events == 0 for c in res.cells)


def test_determinism_and_thread_independence(two_patch):
    x0 = ContinuousState([0.4, 0.4], [0.1, 0.1])
    cfg1 = LlnStudyConfig([100, 500], 3, 5.0, master_seed=11, threads=1)
    cfg4 = LlnStudyConfig([100, 500], 3, 5.0, master_seed=11, threads=4)
    a, b = convergence_study(two_patch, x0, cfg1), convergence_study(two_patch, x0, cfg4)
    assert [c.sup_error for c in a.cells] == [c.sup_error for c in b.cells]
    assert [(c.population, c.replicate) for c in a.cells] == [(n, r) for n in (100, 500) for r in range(3)]
    single = convergence_study(two_patch, x0, LlnStudyConfig([500], 1, 5.0, master_seed=11))
    assert single.cells[0].sup_error == a.cells[3].sup_error


def test_grid_covers_horizon(two_patch):
    res = convergence_study(two_patch, ContinuousState([0.4, 0.4], [0.1, 0.1]),
                            LlnStudyConfig([50], 2, 3.0, master_seed=0))
    assert res.grid[0] == 0.0 and res.grid[-1] == pytest.approx(3.0)
    assert all(c.sup_error >= 0 and np.isfinite(c.sup_error) for c in res.cells)


def test_median_decreases(two_patch):
    x0 = ContinuousState([0.4, 0.4], [0.1, 0.1])
    res = convergence_study(two_patch, x0, LlnStudyConfig([100, 1000, 10000], 20, 10.0, master_seed=2024))
    med = res.medians()
    assert np.all(np.diff(med) < 0)
    # diagnostic only: the fitted slope should sit near the diffusion-scaling value
    fit = rate_fit(res)
    assert -0.65 <= fit.slope <= -0.35


def test_default_threads(monkeypatch):
    monkeypatch.setenv("PATCHSIS_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("PATCHSIS_THREADS", "lots")
    with pytest.raises(ValidationError):
        default_threads()
    monkeypatch.delenv("PATCHSIS_THREADS")
    assert default_threads() >= 1
