import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quantum_kalman.errors import DimensionMismatch, SingularResolvent, SingularTransform
from quantum_kalman.statespace import (StateSpaceSystem, cascade, eval_transfer,
                                       frequency_response,
                                       hautus_controllable, hautus_observable,
                                       is_squeezing, match_multisets, poles,
                                       power_spectrum_map, sample_points,
                                       similarity_transform, structural_tests, zeros)


def cavity_x(K=1.0):
    return StateSpaceSystem([[-K**2 / 2]], [[-K]], [[K]], [[1.0]])


def random_system(rng, n=3, m=1, p=1):
    return StateSpaceSystem(rng.normal(size=(n, n)), rng.normal(size=(n, m)),
                            rng.normal(size=(p, n)), rng.normal(size=(p, m)))


def test_pure_feedthrough():
    sys = StateSpaceSystem(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[2.5]])
    assert eval_transfer(sys, 3 + 1j)[0, 0] == 2.5
    assert poles(sys).size == 0 and zeros(sys).size == 0


def test_cavity_values():
    sys = cavity_x()
    assert eval_transfer(sys, 0)[0, 0] == pytest.approx(-1.0)
    assert abs(eval_transfer(sys, 1e6)[0, 0] - 1) < 1e-5
    assert np.allclose(poles(sys), [-0.5])
    assert np.allclose(zeros(sys), [0.5])


def test_singular_resolvent():
    with pytest.raises(SingularResolvent):
        eval_transfer(cavity_x(), -0.5)


def test_shape_validation():
    with pytest.raises(DimensionMismatch):
        StateSpaceSystem(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), [[0.0]])


def test_similarity_identity_and_scaling():
    sys = StateSpaceSystem(np.diag([-0.5, -0.5]), -np.eye(2), np.eye(2), np.eye(2))
    same = similarity_transform(sys, np.eye(2))
    assert np.array_equal(same.A, sys.A)
    scaled = similarity_transform(sys, 2 * np.eye(2))
    assert np.allclose(eval_transfer(scaled, 1.0), eval_transfer(sys, 1.0))


def test_similarity_singular():
    with pytest.raises(SingularTransform):
        similarity_transform(cavity_x(), [[0.0]])


def test_similarity_random():
    rng = np.random.default_rng(1)
    sys = random_system(rng)
    T = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    new = similarity_transform(sys, T)
    for s in sample_points(rng, 10, 5.0, avoid=poles(sys)):
        g0, g1 = eval_transfer(sys, s), eval_transfer(new, s)
        assert np.abs(g1 - g0).max() <= 1e-10 * max(1.0, np.abs(g0).max())
    assert match_multisets(poles(new), poles(sys))


def test_cascade_cavity_pair():
    g = cavity_x()
    c = cascade(g, g)
    assert c.nstates == 2
    assert eval_transfer(c, 1.0)[0, 0] == pytest.approx((1 - 1 / 1.5) ** 2)


def test_cascade_identity_feedthrough():
    g = cavity_x()
    ident = StateSpaceSystem(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[1.0]])
    c = cascade(g, ident)
    assert eval_transfer(c, 0.3 + 2j) == pytest.approx(eval_transfer(g, 0.3 + 2j))


def test_cascade_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        cascade(cavity_x(), random_system(np.random.default_rng(0), p=2))


@pytest.mark.parametrize("A, B, C, expected", [
    ([[-1.0]], [[1.0]], [[1.0]], (True, True, True, True, True)),
    ([[1.0]], [[0.0]], [[1.0]], (False, False, True, False, True)),
    (np.diag([-1.0, 1.0]), [[0.0], [1.0]], [[1.0, 0.0]], (False, False, False, True, False)),
])
def test_structural_cases(A, B, C, expected):
    rep = structural_tests(StateSpaceSystem(A, B, C, [[0.0]]))
    got = (rep.stable, rep.controllable, rep.observable, rep.stabilizable, rep.detectable)
    assert got == expected


def test_power_spectrum():
    unit = StateSpaceSystem(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[1.0]])
    flat = lambda w: 1.0
    assert power_spectrum_map(unit, flat, 3.0) == 1.0
    assert power_spectrum_map(cavity_x(), flat, 0.0) == pytest.approx(1.0)
    # Zero at the origin kills the spectrum at w = 0.
    g = StateSpaceSystem([[-1.0]], [[-2.0]], [[1.0]], [[2.0]])
    assert np.allclose(zeros(g), [0.0])
    assert power_spectrum_map(g, flat, 0.0) == pytest.approx(0.0, abs=1e-20)


def test_squeezing_detection():
    # G(s) = s / (s + 1) has |G(iw)| < 1 everywhere.
    assert is_squeezing(StateSpaceSystem([[-1.0]], [[1.0]], [[-1.0]], [[1.0]]))
    assert not is_squeezing(cavity_x())


def test_json_roundtrip_complex():
    sys = StateSpaceSystem([[1j, 0], [0, -1]], [[1], [2]], [[1, 1j]], [[0.5]])
    back = StateSpaceSystem.from_json(sys.to_json())
    assert np.array_equal(back.A, sys.A) and np.array_equal(back.C, sys.C)
    obj = json.loads(sys.to_json())
    assert obj["A"][0][0] == [0.0, 1.0]


def test_json_rejects_unknown_key():
    with pytest.raises((KeyError, ValueError, TypeError)):
        StateSpaceSystem.from_dict({"A": [[0]], "B": [[0]], "C": [[0]], "D": [[0]], "E": 1})


matrices = st.integers(1, 4).flatmap(lambda n: st.tuples(
    st.just(n), st.integers(0, 2**32 - 1)))


@settings(max_examples=40, deadline=None)
@given(matrices)
def test_cascade_multiplicative(args):
    n, seed = args
    rng = np.random.default_rng(seed)
    g1 = random_system(rng, n, 2, 1)
    g2 = random_system(rng, n, 1, 2)
    c = cascade(g1, g2)
    avoid = np.concatenate([poles(g1), poles(g2)])
    for s in sample_points(rng, 5, 5.0, avoid=avoid, margin=0.05):
        want = eval_transfer(g1, s) @ eval_transfer(g2, s)
        assert np.allclose(eval_transfer(c, s), want, rtol=1e-8, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(matrices)
def test_observability_is_dual_controllability(args):
    n, seed = args
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    C = rng.normal(size=(1, n)) * (rng.uniform() > 0.3)
    assert hautus_observable(C, A) == hautus_controllable(A.T, C.T)


@settings(max_examples=40, deadline=None)
@given(matrices)
def test_zeros_are_similarity_invariant(args):
    n, seed = args
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n)
    T = rng.normal(size=(n, n)) + 3 * np.eye(n)
    assert match_multisets(zeros(similarity_transform(sys, T)), zeros(sys), tol=1e-6)


def test_frequency_response_matches_pointwise():
    rng = np.random.default_rng(5)
    sys = random_system(rng, 3, 2, 2)
    pts = sample_points(rng, 8, 4.0, avoid=poles(sys))
    batch = frequency_response(sys, pts)
    for k, s in enumerate(pts):
        assert np.allclose(batch[k], eval_transfer(sys, s), rtol=1e-12, atol=1e-14)
    assert np.all(np.isnan(frequency_response(cavity_x(), [-0.5])))
