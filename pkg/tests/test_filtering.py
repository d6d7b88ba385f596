import numpy as np
import pytest

from quantum_kalman.errors import Degeneracy, DimensionMismatch, NonFinite
from quantum_kalman.filtering import (FilterState, LinearFilterModel, NoiseStreams,
                                      WhitenessAccumulator, affine_diffusion, affine_drift,
                                      kalman_step, particle_filter_oracle, path_rng,
                                      run_filtered_experiment, simulate_sde, whiteness_test)
from quantum_kalman.quantum_linear import canonical_system, measured_system
from quantum_kalman.riccati import integrate_riccati


def scalar(A=-1.0, B=1.0, C=1.0, D=1.0, S=0.0):
    return LinearFilterModel([[A]], [[B]], [[C]], [[D]], [[S]])


def test_noise_stream_is_per_path():
    a = NoiseStreams(5, [0, 1, 2], 2)
    b = NoiseStreams(5, [2], 2)
    first = np.array([a.draw() for _ in range(300)])
    only = np.array([b.draw() for _ in range(300)])
    assert np.array_equal(first[:, 2], only[:, 0])


def test_noise_stream_matches_documented_generator():
    ref = np.random.Generator(np.random.PCG64(np.random.SeedSequence([11, 3])))
    expected = ref.standard_normal((4, 2))
    ns = NoiseStreams(11, [3], 2)
    got = np.array([ns.draw()[0] for _ in range(4)])
    assert np.array_equal(got, expected)
    assert np.array_equal(path_rng(11, 3).standard_normal(3), expected.ravel()[:3])


def test_model_validation():
    with pytest.raises(DimensionMismatch):
        LinearFilterModel([[0.0]], [[1.0]], [[1.0]], [[1.0]], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        scalar(S=1.5)


def test_shared_noise_uses_one_vector():
    m = measured_system(canonical_system(1.0, 0.0)).model
    assert m.noise_dim == 2
    dw, dv = m.split_noise(np.array([[0.3, -1.2]]))
    assert np.array_equal(dw, dv)


def test_no_measurement_follows_drift():
    m = LinearFilterModel([[-1.0]], [[0.0]], [[0.0]], [[1.0]])
    st = FilterState(np.array([1.0]), np.zeros((1, 1)))
    dt = 1e-4
    for _ in range(10000):
        st, _ = kalman_step(m, st, [0.0], dt)
    assert st.x_hat[0] == pytest.approx(np.exp(-1), rel=1e-3)


def test_scalar_riccati_fixed_point():
    m = scalar(A=0.0)
    ser = integrate_riccati(m.A, m.B, m.C, m.D, m.S_corr, [[0.0]], dt=1e-2, t_end=20)
    assert ser.final[0, 0] == pytest.approx(1.0, abs=1e-10)


def test_cavity_gain_first_column():
    m = measured_system(canonical_system(1.0, 0.25)).model
    P = np.diag([1.5, 1 / 1.5])
    K = m.gain(P)
    assert np.allclose(K[:, 0], P @ np.array([1.0, 0.0]) * 1.0 - np.array([1.0, 0.0]))
    assert np.allclose(K[:, 1], 0.0)


def test_uncorrelated_reduces_to_plain_kalman():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(2, 2)) - 2 * np.eye(2)
    B = rng.normal(size=(2, 2))
    C = rng.normal(size=(1, 2))
    D = np.array([[0.7, 0.2]])
    m = LinearFilterModel(A, B, C, D, np.zeros((2, 2)))
    x = rng.normal(size=2)
    P = np.eye(2)
    dm = rng.normal(size=1) * 0.01
    dt = 1e-3
    st, dv = kalman_step(m, FilterState(x, P), dm, dt)
    R = D @ D.T
    direct = x + A @ x * dt + P @ C.T @ np.linalg.inv(R) @ (dm - C @ x * dt)
    assert np.abs(st.x_hat - direct).max() < 1e-12
    assert np.allclose(dv, dm - C @ x * dt)


def test_drive_leaves_covariance_bit_identical():
    m = measured_system(canonical_system(1.0, 0.0)).model
    kw = dict(dt=1e-2, n_steps=300, seed=4, record_every=1)
    a = run_filtered_experiment(m, None, np.zeros(2), 2 * np.eye(2), **kw)
    b = run_filtered_experiment(m, None, np.zeros(2), 2 * np.eye(2), drive=[3.0, -2.0], **kw)
    assert np.array_equal(a.P, b.P)
    assert not np.array_equal(a.x_hat, b.x_hat)


def test_null_space_of_measurement_is_ignored():
    m = measured_system(canonical_system(1.0, 0.3)).model
    st = FilterState(np.array([0.2, -0.1]), np.eye(2))
    a, _ = kalman_step(m, st, [0.01, 0.0], 1e-3)
    b, _ = kalman_step(m, st, [0.01, 123.0], 1e-3)
    assert np.array_equal(a.x_hat, b.x_hat)


def test_simulate_deterministic_decay():
    tr = simulate_sde(affine_drift([[-1.0]]), affine_diffusion([[0.0]]), [1.0], 1e-3, 1000, 0)
    assert abs(tr.X[-1, 0, 0] - np.exp(-1)) < 1e-3


def test_simulate_wiener_variance():
    tr = simulate_sde(affine_drift([[0.0]]), affine_diffusion([[1.0]]), [0.0], 1e-2, 100, 1,
                      n_paths=10000, record_every=100)
    assert np.var(tr.X[-1, :, 0]) == pytest.approx(1.0, rel=0.05)


def test_simulate_bilinear_rotation_keeps_z():
    K = 1.0
    B = np.array([[0, -K, 0], [K, 0, 0], [0, 0, 0.0]])
    drift = affine_drift(np.diag([-K**2 / 2, -K**2 / 2, 0.0]))
    diff = affine_diffusion(np.zeros((3, 1)), [B])
    x0 = np.array([3.0, 0.5, 1.25])
    tr = simulate_sde(drift, diff, x0, 1e-3, 500, 2, n_paths=20)
    assert np.all(tr.X[:, :, 2] == 1.25)
    assert np.std(tr.X[-1, :, 0]) > 0


def test_simulate_nonfinite():
    with pytest.raises(NonFinite):
        simulate_sde(affine_drift([[1e3]]), affine_diffusion([[0.0]]), [1.0], 1.0, 200, 0)


def test_exact_start_tracks_truth_without_process_noise():
    m = LinearFilterModel(np.array([[0.0, 1.0], [-1.0, -0.1]]), np.zeros((2, 2)), np.eye(2),
                          np.zeros((2, 2)), np.zeros((2, 2)))
    x0 = np.array([1.0, 0.0])
    res = run_filtered_experiment(m, x0, x0, np.zeros((2, 2)), 1e-3, 2000, 9)
    assert np.abs(res.truth - res.x_hat).max() < 1e-12
    assert res.P.max() == 0


def test_scalar_monte_carlo_consistency():
    m = scalar(A=-1.0, S=0.5)
    P_s = integrate_riccati(m.A, m.B, m.C, m.D, m.S_corr, [[1.0]], dt=1e-2, t_end=30).final[0, 0]
    res = run_filtered_experiment(m, None, np.zeros(1), [[P_s]], 1e-2, 4000, 12, n_paths=200,
                                  record_every=4000, average_from=500)
    ratio = res.error_moment[0, 0] / P_s
    assert 0.9 <= ratio <= 1.1
    rho = res.whiteness.autocorrelation()[0]
    assert np.all(np.abs(rho) < res.whiteness.band())


def test_ensemble_unbiased():
    m = scalar(A=-0.5, S=-0.3)
    res = run_filtered_experiment(m, None, np.zeros(1), [[1.0]], 1e-2, 300, 21, n_paths=10000,
                                  record_every=300)
    e = res.truth[-1, :, 0] - res.x_hat[-1, :, 0]
    se = e.std(ddof=1) / np.sqrt(e.size)
    assert abs(e.mean()) < 3 * se


def test_batching_and_threads_do_not_change_results():
    m = measured_system(canonical_system(1.0, 0.2)).model
    kw = dict(dt=1e-2, n_steps=50, seed=3, n_paths=10, record_every=10)
    a = run_filtered_experiment(m, None, np.zeros(2), np.eye(2), **kw)
    b = run_filtered_experiment(m, None, np.zeros(2), np.eye(2), batch_size=3, workers=3, **kw)
    assert np.array_equal(a.truth, b.truth) and np.array_equal(a.x_hat, b.x_hat)
    assert a.to_csv(4) == b.to_csv(4)
    # Pooled sums only differ by summation order.
    assert np.allclose(a.whiteness.sums, b.whiteness.sums, rtol=1e-12, atol=1e-14)


def test_csv_layout():
    m = scalar()
    res = run_filtered_experiment(m, [0.5], [0.0], [[1.0]], 0.1, 3, 0)
    lines = res.to_csv().splitlines()
    assert lines[0] == "t,x0,xhat0,dm0,dv0"
    assert len(lines) == 5
    assert float(lines[2].split(",")[3]) == res.dm[0, 0, 0]


def test_whiteness_detects_correlation():
    rng = np.random.default_rng(0)
    white = rng.normal(size=5000)
    rho, band = whiteness_test(white)
    assert np.all(np.abs(rho) < band)
    ma = white[1:] + 0.8 * white[:-1]
    rho, band = whiteness_test(ma)
    assert abs(rho[0]) > band[0]


def test_whiteness_merge():
    a, b = WhitenessAccumulator(1, 3), WhitenessAccumulator(1, 3)
    a.add(np.ones((2, 1)))
    b.add(np.ones((3, 1)))
    a.merge(b)
    assert a.counts[0] == 5


def _scalar_record(seed=3, steps=2000):
    m = scalar(S=0.5)
    res = run_filtered_experiment(m, None, np.zeros(1), np.eye(1), 1e-3, steps, seed)
    return m, res


def test_particle_filter_matches_kalman():
    m, res = _scalar_record()
    pf = particle_filter_oracle(affine_drift(m.A), affine_diffusion(m.B), lambda x: x @ m.C.T,
                                m.D, res.dm[:, 0, :], 1e-3, 4000, 5, [0.0], [[1.0]], S_corr=m.S_corr)
    z = (pf.means - res.x_hat[1:, 0, :]) / pf.stderr
    assert np.sqrt(np.mean(z**2)) < 3
    assert pf.stds[-1, 0] ** 2 == pytest.approx(res.P[-1, 0, 0], rel=0.1)


def test_particle_filter_collapses_on_noiseless_model():
    A = np.array([[-1.0]])
    x0 = np.array([1.0])
    dt, steps = 1e-3, 400
    tr = simulate_sde(affine_drift(A), affine_diffusion([[0.0]]), x0, dt, steps, 0)
    truth = tr.X[:, 0, 0]
    D = 1e-3
    rng = np.random.default_rng(1)
    dm = truth[:-1, None] * dt + D * np.sqrt(dt) * rng.normal(size=(steps, 1))
    pf = particle_filter_oracle(affine_drift(A), affine_diffusion([[0.0]]), lambda x: x,
                                [[D]], dm, dt, 2000, 3, [1.0], [[0.01]])
    assert abs(pf.means[-1, 0] - truth[-1]) < 0.02


def test_particle_filter_degeneracy():
    dm = np.full((5, 1), 100.0)
    with pytest.raises(Degeneracy):
        particle_filter_oracle(affine_drift([[0.0]]), affine_diffusion([[0.0]]), lambda x: x,
                               [[0.01]], dm, 1e-3, 1000, 0, [0.0], [[1.0]])
