import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patchsis import ContinuousState, DiscreteState, ValidationError, make_model
from patchsis.errors import Absorbed
from patchsis.ssa import (
    EventChannel, EveryEvent, FinalOnly, Grid, SimConfig, channel_table, event_rates,
    initial_counts, make_rng, parse_recording, recording_to_str, scale, simulate,
    step,
)

from conftest import random_model


def test_initial_counts_exact():
    assert initial_counts(ContinuousState([0.5], [0.5]), 100) == DiscreteState([50], [50])
    x = ContinuousState([0.25, 0.25], [0.25, 0.25])
    np.testing.assert_array_equal(initial_counts(x, 1000).as_vector(), [250, 250, 250, 250])


def test_initial_counts_floor():
    st_ = initial_counts(ContinuousState([0.335, 0.0], [0.165, 0.5]), 10)
    np.testing.assert_array_equal(st_.s, [3, 0])
    np.testing.assert_array_equal(st_.i, [1, 5])


def test_initial_counts_rejects_bad_input():
    with pytest.raises(ValidationError):
        initial_counts(ContinuousState([0.8], [0.5]), 10)
    with pytest.raises(ValidationError):
        initial_counts(ContinuousState([-0.1], [0.5]), 10)


def test_event_rates_hand_arithmetic():
    m = make_model(1.5, 1.0)
    rates = event_rates(DiscreteState([30], [10]), m)
    # scalar reference: lambda * S * I / (S + I), gamma * I
    assert rates[EventChannel("Infection", 0)] == pytest.approx(1.5 * 30 * 10 / 40, abs=1e-12)
    assert rates[EventChannel("Recovery", 0)] == pytest.approx(10.0, abs=1e-12)


@pytest.mark.parametrize("s, i", [(0, 5), (5, 0), (0, 0)])
def test_infection_rate_vanishes(s, i):
    rates = event_rates(DiscreteState([s], [i]), make_model(2.0, 1.0))
    assert rates[EventChannel("Infection", 0)] == 0.0


def test_migration_rates():
    m = make_model([1, 1], [1, 1], [[0, 2], [2, 0]], nu_s=0.5, nu_i=0.25)
    rates = event_rates(DiscreteState([10, 4], [3, 0]), m)
    assert rates[EventChannel("MigrateS", 0, 1)] == pytest.approx(0.5 * 2 * 10)
    assert rates[EventChannel("MigrateS", 1, 0)] == pytest.approx(0.5 * 2 * 4)
    assert rates[EventChannel("MigrateI", 0, 1)] == pytest.approx(0.25 * 2 * 3)
    assert rates[EventChannel("MigrateI", 1, 0)] == 0.0


def test_zero_coefficient_channels_are_skipped():
    m = make_model([1, 1], [1, 1], [[0, 1], [1, 0]], nu_s=0.0, nu_i=0.3)
    kinds = {ch.kind for ch in (channel_table(m).channel(c) for c in range(len(channel_table(m))))}
    assert "MigrateS" not in kinds and "MigrateI" in kinds


def test_step_absorbed_when_disease_free_single_patch():
    with pytest.raises(Absorbed):
        step(DiscreteState([20], [0]), make_model(2.0, 1.0), make_rng(0))


def test_recovery_jump_vector():
    # lambda tiny relative to gamma would still allow infections; use S=0 so only recovery can fire
    dt, ch, nxt = step(DiscreteState([0], [7]), make_model(2.0, 1.0), make_rng(1))
    assert ch == EventChannel("Recovery", 0)
    assert dt > 0
    assert nxt == DiscreteState([1], [6])


def test_subcritical_extinction_over_100_seeds():
    m = make_model(0.5, 1.0)
    x0 = ContinuousState([0.9], [0.1])
    for seed in range(100):
        traj = simulate(m, x0, SimConfig(200, 1e4, seed, FinalOnly()))
        assert traj.absorbed, seed
        assert traj.counts[-1, 1] == 0 and traj.counts[-1, 0] == 200


def test_zero_horizon():
    m = make_model(2.0, 1.0)
    traj = simulate(m, ContinuousState([0.5], [0.5]), SimConfig(100, 0.0, 3))
    assert traj.event_count == 0
    np.testing.assert_array_equal(traj.times, [0.0])
    np.testing.assert_array_equal(traj.counts, [[50, 50]])


def test_migration_only_conserves_population():
    m = make_model([1, 1], [1, 1], [[0, 1], [1, 0]], nu_s=1.0, nu_i=1.0)
    traj = simulate(m, ContinuousState([0.5, 0.5], [0.0, 0.0]), SimConfig(200, 20.0, 5))
    s = traj.counts[:, :2]
    assert traj.event_count > 100
    assert np.all(s.sum(axis=1) == 200)
    assert len(np.unique(s[:, 0])) > 5
    assert np.all(traj.counts[:, 2:] == 0)


def test_scale():
    m = make_model(2.0, 1.0)
    traj = simulate(m, ContinuousState([0.5], [0.5]), SimConfig(100, 0.0, 0))
    np.testing.assert_array_equal(scale(traj).values, [[0.5, 0.5]])
    traj = simulate(m, ContinuousState([1.0], [0.0]), SimConfig(100, 5.0, 0))
    assert np.all(scale(traj).values[:, 1] == 0)
    with pytest.raises(ValidationError):
        scale(traj, 50)


def test_reproducible(two_patch):
    x0 = ContinuousState([0.4, 0.4], [0.1, 0.1])
    cfg = SimConfig(2000, 5.0, 42)
    a, b = simulate(two_patch, x0, cfg), simulate(two_patch, x0, cfg)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.counts, b.counts)
    c = simulate(two_patch, x0, SimConfig(2000, 5.0, 43))
    assert not np.array_equal(a.counts[-1], c.counts[-1]) or a.event_count != c.event_count


def test_recording_policies_share_one_path(two_patch):
    x0 = ContinuousState([0.4, 0.4], [0.1, 0.1])
    every = simulate(two_patch, x0, SimConfig(500, 4.0, 9, EveryEvent()))
    grid = simulate(two_patch, x0, SimConfig(500, 4.0, 9, Grid(0.25)))
    final = simulate(two_patch, x0, SimConfig(500, 4.0, 9, FinalOnly()))
    assert every.event_count == grid.event_count == final.event_count
    idx = np.searchsorted(every.times, grid.times, side="right") - 1
    np.testing.assert_array_equal(grid.counts, every.counts[idx])
    np.testing.assert_array_equal(final.counts[0], every.counts[-1])
    assert final.counts.shape[0] == 1


def test_grid_after_absorption_holds_frozen_state():
    m = make_model(0.3, 1.0)
    traj = simulate(m, ContinuousState([0.9], [0.1]), SimConfig(50, 100.0, 2, Grid(1.0)))
    assert traj.absorbed and traj.absorbed_at < 100
    assert traj.times.shape == (101,)
    tail = traj.times > traj.absorbed_at
    assert np.all(traj.counts[tail] == [50, 0])


def test_recording_parse_round_trip():
    for text in ("every", "final", "grid:0.5"):
        assert parse_recording(recording_to_str(parse_recording(text))) == parse_recording(text)
    for bad in ("grid:0", "grid:-1", "sometimes", "grid:x"):
        with pytest.raises(ValidationError):
            parse_recording(bad)


def test_sim_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(0, 1.0, 0)
    with pytest.raises(ValidationError):
        SimConfig(10, -1.0, 0)


def test_empty_initial_population_rejected():
    with pytest.raises(ValidationError):
        simulate(make_model(2.0, 1.0), ContinuousState([0.01], [0.01]), SimConfig(10, 1.0, 0))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(10, 400))
def test_conservation_and_nonnegativity(seed, n):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    z = rng.dirichlet(np.ones(2 * m.ell))
    traj = simulate(m, ContinuousState.from_vector(z), SimConfig(n, 3.0, seed))
    assert np.all(traj.counts >= 0)
    assert np.all(traj.counts.sum(axis=1) == traj.counts[0].sum())
    assert np.all(np.diff(traj.times) > 0)
    # every recorded event changes the state by one of the allowed jump vectors
    jumps = np.abs(np.diff(traj.counts, axis=0)).sum(axis=1)
    assert np.all(jumps == 2)


def test_embedded_chain_fixed_state():
    # from S=30, I=10: P(infection) = 11.25 / 21.25
    m = make_model(1.5, 1.0)
    state = DiscreteState([30], [10])
    rng = make_rng(7)
    hits = sum(step(state, m, rng)[1].kind == "Infection" for _ in range(4000))
    p = 11.25 / 21.25
    se = np.sqrt(p * (1 - p) / 4000)
    assert abs(hits / 4000 - p) < 3 * se


def test_holding_time_mean():
    # from a fixed state the holding time is exponential with the total rate
    m = make_model(1.5, 1.0)
    state = DiscreteState([30], [10])
    rng = make_rng(11)
    dts = np.array([step(state, m, rng)[0] for _ in range(4000)])
    mean = 1 / 21.25
    assert abs(dts.mean() - mean) < 3 * mean / np.sqrt(4000)
