import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lvfa.model import make_spec
from lvfa.odeint import dopri, integrate, integrate_batch, integrate_matrix, write_csv


@pytest.fixture(scope="module")
def logistic():
    return make_spec(["1"], [["1"]], samples=11)


def logistic_exact(u0, t):
    # u' = u(1-u):  u(t) = u0 / (u0 + (1-u0) e^{-t})
    return u0 / (u0 + (1 - u0) * math.exp(-t))


def test_fixed_point(logistic):
    g = integrate(logistic, 0.0, np.array([1.0]), 10.0)
    assert abs(g.final[0] - 1.0) < 1e-9


def test_zero_stays_zero(logistic):
    g = integrate(logistic, 0.0, np.array([0.0]), 10.0)
    assert np.all(g.states == 0.0)


def test_closed_form(logistic):
    g = integrate(logistic, 0.0, np.array([0.5]), 5.0)
    assert abs(g.final[0] - 0.9933071490757153) < 1e-8
    ts = np.linspace(0, 5, 41)
    exact = np.array([logistic_exact(0.5, t) for t in ts])
    assert np.max(np.abs(g(ts)[:, 0] - exact)) < 1e-8


def test_backward_integration(logistic):
    g = integrate(logistic, 0.0, np.array([0.5]), -5.0, 1e-11, 1e-14)
    assert g.times[0] == -5.0 and g.times[-1] == 0.0
    assert abs(g.states[0, 0] - logistic_exact(0.5, -5.0)) < 1e-10


def test_blowup_guard_backward(logistic):
    # u0 = 2: u(t) = 1 / (1 - 0.5 e^{-t}) blows up at t = -ln 2
    g = integrate(logistic, 0.0, np.array([2.0]), -5.0, escape=1e3)
    assert g.escape_time is not None
    assert -math.log(2) < g.escape_time < -math.log(2) + 1e-2


def test_zero_coordinates_bit_exact():
    spec = make_spec(["1", "0.5+sin(t)", "2"], [["2", "-1", "-0.5"], ["-1", "2", "0"], ["0", "-1", "3"]], samples=11)
    g = integrate(spec, 0.0, np.array([0.3, 0.0, 0.7]), 20.0)
    assert np.all(g.states[:, 1] == 0.0)
    assert np.all(g(np.linspace(0, 20, 77))[:, 1] == 0.0)
    assert np.all(g.states[:, [0, 2]] > 0)


def test_scalar_matrix():
    M = integrate_matrix(lambda t: np.array([[-1.0]]), 0.0, 1.0, 1e-10)
    assert abs(M[0, 0] - math.exp(-1)) < 1e-9


def test_diagonal_matrix():
    M = integrate_matrix(lambda t: np.diag([-1.0, 1.0]), 0.0, 2.0, 1e-11)
    assert np.allclose(M, np.diag([math.exp(-2), math.exp(2)]), rtol=1e-9, atol=0)


def test_rotation_composition():
    R = lambda t: np.array([[0.0, 1.0], [-1.0, 0.0]])  # noqa: E731
    M10 = integrate_matrix(R, 0, 1, 1e-10)
    M21 = integrate_matrix(R, 1, 2, 1e-10)
    M20 = integrate_matrix(R, 0, 2, 1e-10)
    assert np.max(np.abs(M21 @ M10 - M20)) < 1e-8
    c, s = math.cos(2), math.sin(2)
    assert np.allclose(M20, [[c, s], [-s, c]], atol=1e-8)


def test_backward_matrix_is_inverse():
    D = lambda t: np.array([[-1.0, math.sin(t)], [0.0, 0.5]])  # noqa: E731
    F = integrate_matrix(D, 0.0, 3.0, 1e-11)
    B = integrate_matrix(D, 3.0, 0.0, 1e-11)
    assert np.allclose(B @ F, np.eye(2), atol=1e-8)


def test_dense_output_order():
    # the interpolant between steps should be accurate far beyond linear interpolation
    sol = dopri(lambda t, y: np.array([math.cos(t)]), 0.0, np.array([0.0]), 10.0, 1e-10, 1e-12)
    ts = np.linspace(0, 10, 1001)
    assert np.max(np.abs(sol.dense(ts)[:, 0] - np.sin(ts))) < 1e-8


def test_batch_matches_single(logistic):
    spec = make_spec(["1+0.5*sin(t)", "2"], [["1", "-0.5"], ["-0.3", "2"]], samples=11)
    U0 = np.array([[0.2, 1.0], [3.0, 0.1]])
    gb = integrate_batch(spec, 0.0, U0, 10.0, 1e-11, 1e-14)
    for k in range(2):
        g = integrate(spec, 0.0, U0[k], 10.0, 1e-11, 1e-14)
        assert np.allclose(gb.final[k], g.final, rtol=1e-8)


def test_csv(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, np.array([0.0, 0.1]), np.array([[1.0, 2.0], [1 / 3, 0.0]]))
    lines = p.read_text().splitlines()
    assert lines[0] == "t,u1,u2"
    assert float(lines[2].split(",")[1]) == 1 / 3


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.5, 8.0), st.floats(0.1, 0.9))
def test_cocycle(u0, T, frac):
    spec = make_spec(["1+0.5*sin(t)"], [["1"]], samples=11)
    rtol = 1e-9
    t1 = frac * T
    direct = integrate(spec, 0.0, np.array([u0]), T, rtol, 1e-12).final
    mid = integrate(spec, 0.0, np.array([u0]), t1, rtol, 1e-12).final
    composed = integrate(spec, t1, mid, T, rtol, 1e-12).final
    assert abs(composed[0] - direct[0]) <= 10 * rtol * max(1.0, abs(direct[0]))


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 50.0))
def test_positivity(u0):
    spec = make_spec(["0-3"], [["1"]], samples=11)
    g = integrate(spec, 0.0, np.array([u0]), 30.0)
    assert np.all(g.states > 0)
