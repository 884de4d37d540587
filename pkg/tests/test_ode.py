import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from patchsis import ContinuousState, ValidationError, make_model
from patchsis.errors import StepSizeUnderflow, SolverError
from patchsis.equilibria import dfe
from patchsis.ode import (
    OdeConfig, RK4Fixed, RK45Adaptive, drift, drift_homogeneous, drift_reduced, integrate,
    integrate_reduced, integrate_rhs, make_rhs, time_grid,
)

from conftest import random_model


def logistic(t, lam, gamma, i0):
    """Closed-form prevalence of the well-mixed SIS model with unit mass."""
    k = 1 - gamma / lam
    return k / (1 + (k / i0 - 1) * np.exp(-(lam - gamma) * t))


def test_drift_vanishes_at_dfe():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = random_model(rng)
        np.testing.assert_allclose(drift(dfe(m.ell), m), 0.0, atol=1e-15)


def test_drift_vanishes_at_homogeneous_ee():
    m = make_model(1.5, 1.0)
    np.testing.assert_allclose(drift(ContinuousState([1 / 1.5], [1 - 1 / 1.5]), m), 0.0, atol=1e-15)


def test_drift_components_sum_to_zero():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        m = random_model(rng)
        z = rng.dirichlet(np.ones(2 * m.ell))
        assert abs(drift(z, m).sum()) < 1e-13


def test_drift_against_hand_written_two_patch():
    lam, gamma, a, nu_s, nu_i = np.array([1.5, 2.0]), np.array([1.0, 0.7]), 0.8, 0.2, 0.3
    m = make_model(lam, gamma, [[0, a], [a, 0]], nu_s, nu_i)
    s, i = np.array([0.3, 0.2]), np.array([0.1, 0.4])
    n = s + i
    inf = lam * s * i / n
    ds = -inf + gamma * i + nu_s * a * (s[::-1] - s)
    di = inf - gamma * i + nu_i * a * (i[::-1] - i)
    np.testing.assert_allclose(drift(np.concatenate([s, i]), m), np.concatenate([ds, di]), atol=1e-15)


def test_drift_empty_patch_convention():
    m = make_model([2, 2], [1, 1], [[0, 1], [1, 0]], 0.1, 0.1)
    d = drift([0.0, 0.5, 0.0, 0.5], m)
    assert np.all(np.isfinite(d))


def test_reduced_drift_matches_full():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        m = random_model(rng, equal=True)
        z = rng.dirichlet(np.ones(2 * m.ell))
        s, i = z[: m.ell], z[m.ell:]
        full = drift(z, m)
        dn, di = drift_reduced(s + i, i, m)
        np.testing.assert_allclose(dn, full[: m.ell] + full[m.ell:], atol=1e-14)
        np.testing.assert_allclose(di, full[m.ell:], atol=1e-14)


def test_reduced_drift_special_cases():
    m = make_model([2, 3, 1.5], [1, 1, 1], [[0, 1, 0], [1, 0, 2], [0, 2, 0]], 0.4, 0.4)
    n = np.array([0.5, 0.2, 0.3])
    dn, di = drift_reduced(n, np.zeros(3), m)
    np.testing.assert_array_equal(di, 0.0)
    D = np.array([[-1, 1, 0], [1, -3, 2], [0, 2, -2]])
    np.testing.assert_allclose(dn, 0.4 * D @ n, atol=1e-15)
    dn, _ = drift_reduced(np.full(3, 1 / 3), np.array([0.1, 0.05, 0.2]), m)
    np.testing.assert_allclose(dn, 0.0, atol=1e-15)


def test_drift_homogeneous():
    assert drift_homogeneous(0.5, 0.5, 2.0, 1.0) == (0.0, 0.0)
    assert drift_homogeneous(0.7, 0.0, 2.0, 1.0) == (0.0, 0.0)
    ds, di = drift_homogeneous(1 / 1.5, 1 - 1 / 1.5, 1.5, 1.0)
    assert abs(ds) < 1e-15 and abs(di) < 1e-15


def test_time_grid():
    np.testing.assert_allclose(time_grid(1.0, 0.25), [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(time_grid(1.0, 0.3), [0, 0.3, 0.6, 0.9, 1.0])
    assert time_grid(10.0, 0.05).shape == (201,)
    np.testing.assert_array_equal(time_grid(0.0, 1.0), [0.0])


def test_dfe_is_constant():
    m = make_model([2, 1.5, 3], [1, 1, 1], [[0, 1, 1], [1, 0, 1], [1, 1, 0]], 0.2, 0.3)
    traj = integrate(m, dfe(3), OdeConfig(50.0))
    np.testing.assert_allclose(traj.values, np.tile(dfe(3).as_vector(), (len(traj.times), 1)), atol=1e-15)


def test_single_patch_reaches_endemic_state():
    m = make_model(1.5, 1.0)
    traj = integrate(m, [0.9, 0.1], OdeConfig(100.0))
    np.testing.assert_allclose(traj.final.as_vector(), [2 / 3, 1 / 3], atol=1e-6)


@pytest.mark.parametrize("method", [RK45Adaptive(), RK4Fixed(0.01)])
def test_against_logistic_closed_form(method):
    lam, gamma, i0 = 2.5, 1.0, 0.01
    traj = integrate(make_model(lam, gamma), [1 - i0, i0], OdeConfig(20.0, method, 0.5))
    exact = logistic(traj.times, lam, gamma, i0)
    np.testing.assert_allclose(traj.values[:, 1], exact, atol=1e-7)
    np.testing.assert_allclose(traj.values.sum(axis=1), 1.0, atol=1e-12)


def test_rk4_is_fourth_order():
    lam, gamma, i0 = 2.5, 1.0, 0.05
    m = make_model(lam, gamma)
    exact = logistic(5.0, lam, gamma, i0)
    errs = [abs(integrate(m, [1 - i0, i0], OdeConfig(5.0, RK4Fixed(h), record_dt=5.0)).final.i[0] - exact)
            for h in (0.1, 0.05)]
    assert 12 < errs[0] / errs[1] < 20


def test_against_scipy_reference(two_patch):
    z0 = np.array([0.4, 0.4, 0.1, 0.1])
    traj = integrate(two_patch, z0, OdeConfig(10.0, record_dt=0.5))
    ref = solve_ivp(make_rhs(two_patch), (0, 10), z0, method="DOP853", rtol=1e-12, atol=1e-14,
                    t_eval=traj.times)
    np.testing.assert_allclose(traj.values, ref.y.T, atol=1e-7)


def test_tiny_diffusion_two_patch_prevalences():
    m = make_model([1.5, 1.2], [1, 1], [[0, 1], [1, 0]], 1e-4, 1e-4)
    traj = integrate(m, [0.4, 0.4, 0.1, 0.1], OdeConfig(400.0))
    np.testing.assert_allclose(traj.final.prevalence, [0.333, 0.166], atol=2e-3)


def test_mass_drift_long_horizon():
    m = make_model([3, 0.5, 2], [1, 1, 0.5], [[0, 1, 0], [1, 0, 3], [0, 3, 0]], 0.5, 0.05)
    traj = integrate(m, [0.3, 0.2, 0.1, 0.1, 0.2, 0.1], OdeConfig(100.0))
    assert np.abs(traj.mass() - 1.0).max() < 1e-8


def test_reduced_integration_agrees_with_full():
    m = make_model([2, 1.3], [1, 1], [[0, 2], [2, 0]], 0.3, 0.3)
    s0, i0 = np.array([0.5, 0.3]), np.array([0.05, 0.15])
    full = integrate(m, np.concatenate([s0, i0]), OdeConfig(20.0))
    red = integrate_reduced(m, s0 + i0, i0, OdeConfig(20.0))
    np.testing.assert_allclose(red.values[:, 2:], full.values[:, 2:], atol=1e-8)


def test_nonnegative_start_required():
    with pytest.raises(ValidationError):
        integrate(make_model(2.0, 1.0), [1.1, -0.1], OdeConfig(1.0))


def test_config_validation():
    with pytest.raises(ValidationError):
        OdeConfig(-1.0)
    with pytest.raises(ValidationError):
        RK4Fixed(0.0)
    with pytest.raises(ValidationError):
        RK45Adaptive(rel_tol=0.0)


def test_step_size_underflow_on_blow_up():
    # dy/dt = y^2 blows up at t = 1
    with pytest.raises(StepSizeUnderflow):
        integrate_rhs(lambda t, y: y * y, np.array([1.0]), OdeConfig(2.0, record_dt=0.5))


def test_fixed_step_negative_excursion_is_an_error():
    with pytest.raises(SolverError):
        integrate_rhs(lambda t, y: -50 * np.ones_like(y), np.array([1.0]),
                      OdeConfig(1.0, RK4Fixed(0.5)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_positivity_and_mass(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    z0 = rng.dirichlet(np.ones(2 * m.ell))
    traj = integrate(m, z0, OdeConfig(10.0))
    assert np.all(traj.values >= 0)
    assert np.abs(traj.mass() - 1.0).max() < 1e-9
