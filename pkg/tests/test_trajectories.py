import math

import numpy as np
import pytest
from scipy.integrate import quad

from lvfa.conditions import Witness
from lvfa.io import bundled_spec
from lvfa.model import SupportSet, make_spec
from lvfa.trajectories import (
    compute_star,
    estimate_contraction,
    forward_attraction,
    list_complete_solutions,
    pullback_stability,
)


def periodic_logistic_oracle(t: float) -> float:
    """u*(t) for u' = u(2 + sin t - u) from v = 1/u, v' = 1 - (2 + sin t) v."""

    def kernel(s):
        # exp(-int_s^t (2 + sin r) dr)
        return math.exp(-(2 * (t - s) + math.cos(s) - math.cos(t)))

    v, _ = quad(kernel, t - 60.0, t, limit=400, epsabs=1e-14, epsrel=1e-13)
    return 1.0 / v


@pytest.fixture(scope="module")
def perm2():
    spec, _ = bundled_spec("perm2d")
    return spec


@pytest.fixture(scope="module")
def star2(perm2):
    return compute_star(perm2, SupportSet.full(2), window=(-5.0, 5.0))


def test_star_linear_solve(star2):
    ts = np.linspace(-5, 5, 21)
    assert np.max(np.abs(star2(ts) - 3.0)) < 1e-8
    assert star2.convergence_residual <= 1e-8


def test_semitrivial_star(perm2):
    s = compute_star(perm2, SupportSet((0,), 2), window=(-5.0, 5.0))
    U = s(np.linspace(-5, 5, 11))
    assert np.max(np.abs(U[:, 0] - 1.5)) < 1e-8
    assert np.all(U[:, 1] == 0.0)


def test_backward_extension_refused(star2):
    with pytest.raises(ValueError):
        star2(-6.0)
    # forward extension is by integration
    assert np.allclose(star2(30.0), 3.0, atol=1e-8)


def test_periodic_logistic_oracle():
    spec = make_spec(["2+sin(t)"], [["1"]], samples=4001)
    s = compute_star(spec, SupportSet.full(1), window=(-5.0, 5.0))
    for t in (-3.0, 0.0, 2.5):
        assert abs(s(t)[0] - periodic_logistic_oracle(t)) < 1e-6
    lo, hi = s.certified_bounds[0]
    U = s(np.linspace(-5, 5, 101))[:, 0]
    assert np.all(U >= lo - 1e-8) and np.all(U <= hi + 1e-8)


def test_pullback_stability(star2):
    assert pullback_stability(star2) < 1e-8


def test_bad_witness_rejected(perm2):
    # [dbar, d] = [1, 2] does not contain u* = (3, 3) and fails the check
    w = Witness(SupportSet.full(2), d=[2.0, 2.0], dbar=[1.0, 1.0])
    with pytest.raises(ValueError, match="does not certify"):
        compute_star(perm2, SupportSet.full(2), window=(-2.0, 2.0), witness=w)


def test_contraction_logistic():
    spec = make_spec(["1"], [["1"]], samples=11)
    est = estimate_contraction(spec, [0.5], [1.5], horizon=12.0)
    assert est.fitted_decay == pytest.approx(1.0, abs=0.02)
    assert est.sigma1 <= est.sigma2


def test_contraction_degenerate():
    spec = make_spec(["1"], [["1"]], samples=11)
    assert estimate_contraction(spec, [0.5], [0.5]).degenerate


def test_contraction_vs_prediction(perm2):
    est = estimate_contraction(perm2, [1.0, 1.0], [4.0, 4.0], horizon=8.0, delta=1.0)
    assert est.fitted_decay >= est.predicted_decay - 0.1


def test_forward_attraction(perm2, star2):
    err, U0 = forward_attraction(perm2, star2, [4.0, 4.0], n_samples=20)
    assert U0.shape == (20, 2) and np.all(U0 > 0) and np.all(U0 <= 8.0)
    assert err < 1e-5


def test_list_counts_2d(perm2):
    sols, failures = list_complete_solutions(perm2, window=(-2.0, 2.0))
    assert failures == {}
    assert sorted(s.label() for s in sols) == ["{1,2}", "{1}", "{2}", "{}"]


@pytest.mark.slow
def test_list_counts_3d():
    spec, _ = bundled_spec("perm3d")
    sols, failures = list_complete_solutions(spec, window=(-2.0, 2.0))
    assert len(sols) == 8 and failures == {}


def test_list_total_extinction():
    spec, _ = bundled_spec("total2d")
    sols, failures = list_complete_solutions(spec, window=(-2.0, 2.0))
    assert [s.label() for s in sols] == ["{}"]
    assert len(failures) == 3
