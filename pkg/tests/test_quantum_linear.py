import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quantum_kalman.errors import DomainError, ZeroCoupling
from quantum_kalman.filtering import FilterState, kalman_step, run_filtered_experiment
from quantum_kalman.quantum_linear import (canonical_system, lindblad_consistency,
                                           measured_system, scenario_cavity,
                                           scenario_driven_cavity, scenario_inefficient,
                                           stationary_covariance, stationary_from_riccati,
                                           update_coefficient, verify_duality)
from quantum_kalman.riccati import integrate_riccati
from quantum_kalman.statespace import StateSpaceSystem, poles, zeros


@pytest.mark.parametrize("Cx, F", [(1.0, 0.0), (1.0, 0.25), (2.0, 1.0), (0.5, -0.1)])
def test_canonical_pair_is_dual(Cx, F):
    q = canonical_system(Cx, F)
    rep = verify_duality(q.Gx, q.Gy)
    assert rep.max_residual < 1e-9
    assert rep.holds


def test_canonical_cavity_pole_zero():
    # F = 0: pole at -1/2 and zero at +1/2 for both phases.
    q = canonical_system(1.0, 0.0)
    assert q.Gx.A[0, 0] == -0.5 and q.Gy.A[0, 0] == -0.5


def test_classical_pair_fails_duality():
    g = StateSpaceSystem([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    rep = verify_duality(g, g)
    assert rep.max_residual > 1.0
    assert not rep.holds


def test_zero_coupling():
    with pytest.raises(ZeroCoupling):
        canonical_system(0.0, 1.0)
    with pytest.raises(ZeroCoupling):
        stationary_covariance(0.0, 1.0)


@pytest.mark.parametrize("F", [-0.5, -1.0])
def test_stationary_domain(F):
    with pytest.raises(DomainError):
        stationary_covariance(1.0, F)


def test_measured_system_matrices():
    m = measured_system(canonical_system(1.0, 0.25)).model
    assert np.array_equal(m.A, np.diag([-0.25, -0.75]))
    assert np.array_equal(m.B, -np.eye(2))
    assert np.array_equal(m.C, [[1.0, 0.0], [0.0, 0.0]])
    assert np.array_equal(m.D, [[1.0, 0.0], [0.0, 0.0]])
    assert np.array_equal(m.S_corr, np.eye(2))


@pytest.mark.parametrize("Cx, F", [(1.0, 0.0), (1.0, 0.25), (1.0, 1.0), (2.0, 0.5), (0.3, 4.0)])
def test_stationary_covariance_closed_form(Cx, F):
    P = stationary_covariance(Cx, F)
    X = stationary_from_riccati(measured_system(canonical_system(Cx, F)))
    assert np.allclose(X, P, atol=1e-10)
    assert P[0, 0] * P[1, 1] == pytest.approx(1.0, abs=1e-12)


def test_quarter_detuning_values():
    assert np.allclose(stationary_covariance(1.0, 0.25), np.diag([1.5, 2 / 3]))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 5), st.floats(-0.45, 5))
def test_minimum_uncertainty_sweep(Cx, f):
    F = f * Cx**2
    P = stationary_covariance(Cx, F)
    assert P[0, 0] * P[1, 1] == pytest.approx(1.0, rel=1e-12)
    assert verify_duality(canonical_system(Cx, F).Gx, canonical_system(Cx, F).Gy).holds


@pytest.mark.parametrize("delta", [0.0, 0.5, 1.0, 3.0])
def test_inefficient_update_coefficient_is_exact(delta):
    assert update_coefficient(scenario_inefficient(1.0, delta)) == 1 / (1 + delta**2)


@pytest.mark.parametrize("delta", [0.0, 1.0, 3.0])
def test_inefficient_vacuum_is_fixed_point(delta):
    # The gain vanishes at P = I, so losing signal does not move the fixed point.
    assert np.allclose(stationary_from_riccati(scenario_inefficient(1.0, delta)), np.eye(2),
                       atol=1e-10)


def test_inefficient_transient_is_slower():
    finals = []
    for delta in (0.0, 1.0, 3.0):
        m = scenario_inefficient(1.0, delta).model
        ser = integrate_riccati(m.A, m.B, m.C, m.D, m.S_corr, 3 * np.eye(2), dt=1e-2, t_end=1.0)
        finals.append(ser.final[0, 0])
    assert finals[0] < finals[1] < finals[2]


def test_inefficient_validation():
    with pytest.raises(DomainError):
        scenario_inefficient(0.0, 1.0)
    with pytest.raises(DomainError):
        scenario_inefficient(1.0, -1.0)


def test_driven_covariance_identical():
    base, driven = scenario_cavity(1.0).model, scenario_driven_cavity(1.0, 0.3, -0.2)
    assert driven.model is base or np.array_equal(driven.model.A, base.A)
    a = integrate_riccati(base.A, base.B, base.C, base.D, base.S_corr, 2 * np.eye(2), dt=1e-2, t_end=3)
    m = driven.model
    b = integrate_riccati(m.A, m.B, m.C, m.D, m.S_corr, 2 * np.eye(2), dt=1e-2, t_end=3)
    assert np.array_equal(a.P, b.P)


def test_unmeasured_channel_is_irrelevant():
    m = scenario_cavity(1.0).model
    st_ = FilterState(np.array([0.4, 0.1]), np.eye(2))
    a, _ = kalman_step(m, st_, [0.02, 0.0], 1e-3)
    b, _ = kalman_step(m, st_, [0.02, -7.0], 1e-3)
    assert np.array_equal(a.x_hat, b.x_hat)


@pytest.mark.parametrize("F, x0, rates", [
    (0.0, [2.0, 0.0], [0.5, 0.5]),
    (0.0, [0.0, 0.0], [0.5, 0.5]),
    (0.25, [1.0, 1.0], [0.25, 0.75]),
])
def test_ensemble_mean_follows_unconditional_flow(F, x0, rates):
    msys = measured_system(canonical_system(1.0, F))
    P0 = stationary_covariance(1.0, F)
    res = run_filtered_experiment(msys.model, None, x0, P0, 1e-2, 400, 31, n_paths=2000,
                                  record_every=50)
    rep = lindblad_consistency(msys, res, x0)
    assert rep.consistent, rep
    t = res.times[-1]
    want = np.asarray(x0) * np.exp(-np.array(rates) * t)
    assert np.abs(res.x_hat[-1].mean(axis=0) - want).max() < 0.05


@pytest.mark.parametrize("F, pole_at_zero, zero_at_zero", [(0.5, "Gx", "Gy"), (-0.5, "Gy", "Gx")])
def test_pole_zero_mirror_at_origin(F, pole_at_zero, zero_at_zero):
    q = canonical_system(1.0, F)
    g = {"Gx": q.Gx, "Gy": q.Gy}
    assert np.allclose(poles(g[pole_at_zero]), [0.0])
    assert np.allclose(zeros(g[zero_at_zero]), [0.0], atol=1e-12)
    assert verify_duality(q.Gx, q.Gy).pole_zero_symmetric
