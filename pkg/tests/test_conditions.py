import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lvfa.conditions import (
    FAIL,
    PASS_CONSERVATIVE,
    Witness,
    check_A,
    check_B,
    check_H1,
    check_H2,
    search_witness,
)
from lvfa.io import dumps
from lvfa.model import SupportSet, make_spec, subcommunity

B2 = [["2", "-1"], ["-1", "2"]]


@pytest.fixture(scope="module")
def perm2():
    return make_spec(["3", "3"], B2, samples=2001)


@pytest.fixture(scope="module")
def ext2():
    return make_spec(["2", "0-1"], [["1", "-0.1"], ["-0.1", "1"]], samples=2001)


def test_h1_margin_zero(perm2):
    r = check_H1(perm2, [1, 1], 1)
    assert r.verdict == PASS_CONSERVATIVE
    assert abs(r.margin) < 1e-12 and abs(r.conservative_margin) < 1e-12


def test_h1_fail_reports_row(perm2):
    r = check_H1(perm2, [1, 3], 0.1)
    assert r.verdict == FAIL
    assert r.to_json()["worst_index"] == 1
    assert r.margin == pytest.approx(-1.1)


def test_h1_scalar():
    assert check_H1(make_spec(["1"], [["1"]], samples=11), [1], 1).passed


def test_bad_arguments(perm2):
    with pytest.raises(ValueError):
        check_H1(perm2, [1, 0], 1)
    with pytest.raises(ValueError):
        check_H1(perm2, [1, 1], -1)


def test_h2(perm2):
    assert check_H2(perm2, [1, 1], 1).passed
    b = [["1", "0", "0"], ["-3", "1", "0"], ["0", "0", "1"]]
    r = check_H2(make_spec(["1", "1", "1"], b, samples=11), [1, 1, 1], 0.1)
    assert r.verdict == FAIL and r.worst_index == 0


def test_A(perm2):
    full = SupportSet.full(2)
    assert check_A(perm2, [4, 4], [1, 1], full).passed
    assert not check_A(perm2, [2, 2], [1, 1], full).passed


def test_A_periodic_logistic():
    spec = make_spec(["2+sin(t)"], [["1"]], samples=40001)
    assert check_A(spec, [3], [1], SupportSet.full(1)).passed


def test_B_one_extinct(ext2):
    w = Witness(SupportSet((0,), 2), c=[1, 1], d=[3, 1], dbar=[1, np.nan], eps=0.1, theta=1)
    r = check_B(ext2, w)
    assert r.passed
    # slacks: I-lower 2 - 1.1 = 0.9, I-upper 2.7 - 2 = 0.7, J-row -0.5 - (-1) = 0.5
    assert r.margin == pytest.approx(0.5)
    w_full = Witness(SupportSet.full(2), c=[1, 1], d=[3, 1], dbar=[1, 1], eps=0.1, theta=1)
    assert not check_B(ext2, w_full).passed


def test_B_total_extinction():
    spec = make_spec(["0-1", "0-1"], [["1", "-0.1"], ["-0.1", "1"]], samples=101)
    w = Witness(SupportSet((), 2), c=[1, 1], d=[1, 1], eps=0.05, theta=1)
    assert check_B(spec, w).passed


def test_search_h1_infeasible():
    spec = make_spec(["1", "1"], [["1", "-2"], ["-2", "1"]], samples=101)
    res = search_witness(spec, "H1")
    assert res.witness is None and res.status == "infeasible"


def test_search_h1_symmetric(perm2):
    w = search_witness(perm2, "H1").witness
    assert w is not None and w.delta_row > 0
    assert w.c[0] == pytest.approx(w.c[1])


def test_search_scalar():
    w = search_witness(make_spec(["1"], [["2+sin(t)"]], samples=4001), "H1").witness
    assert w.delta_row == pytest.approx(1.0, abs=1e-6)


def test_report_json_deterministic(perm2):
    a = dumps(check_H1(perm2, [1, 1], 0.5).to_json())
    b = dumps(check_H1(perm2, [1, 1], 0.5).to_json())
    assert a == b
    json.loads(a)


# -- properties ------------------------------------------------------------------

offdiag = st.floats(-1.5, 0.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(offdiag, offdiag, st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.01, 2), st.sampled_from([0.1, 10.0, 3.7]))
def test_h1_scale_invariance(b12, b21, c1, c2, delta, lam):
    spec = make_spec(["1", "1"], [["2", repr(b12)], [repr(b21), "1+0.5*sin(t)"]], samples=201)
    r1 = check_H1(spec, [c1, c2], delta)
    r2 = check_H1(spec, [lam * c1, lam * c2], lam * delta)
    assert r1.verdict == r2.verdict


@settings(max_examples=40, deadline=None)
@given(st.floats(0.001, 0.2), st.floats(0.0, 1.0))
def test_B_eps_monotone(eps, shrink):
    spec = make_spec(["2", "0-1"], [["1", "-0.1"], ["-0.1", "1"]], samples=101)
    w = Witness(SupportSet((0,), 2), c=[1, 1], d=[3, 1], dbar=[1, np.nan], eps=eps, theta=1)
    if check_B(spec, w).passed:
        w2 = Witness(w.support, c=w.c, d=w.d, dbar=w.dbar, eps=max(eps * shrink, 1e-6), theta=1)
        assert check_B(spec, w2).passed


def _random_coop(draw, n):
    b = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            b[i][j] = repr(draw(st.floats(2.0, 4.0))) if i == j else repr(draw(st.floats(-0.5, 0.0)))
    a = [repr(draw(st.floats(0.5, 4.0))) for _ in range(n)]
    return make_spec(a, b, samples=11)


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_A_subset_inheritance(data):
    spec = _random_coop(data.draw, 3)
    res = search_witness(spec, "A", SupportSet.full(3))
    if res.witness is None:
        return
    w = res.witness
    for I in [(0,), (1, 2), (0, 2), ()]:
        sub = SupportSet(I, 3)
        assert check_A(spec, w.d, w.dbar, sub).passed


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_search_consistency(data):
    spec = _random_coop(data.draw, data.draw(st.integers(1, 3)))
    n = spec.n
    for kind in ("H1", "H2"):
        w = search_witness(spec, kind).witness
        if w is not None:
            check = check_H1 if kind == "H1" else check_H2
            c = w.c if kind == "H1" else w.cbar
            d = w.delta_row if kind == "H1" else w.delta
            assert check(spec, c, d).passed
    a = search_witness(spec, "A", SupportSet.full(n)).witness
    if a is not None:
        assert check_A(spec, a.d, a.dbar, SupportSet.full(n)).passed
    sub = subcommunity(spec, [0])
    assert search_witness(sub, "H1").witness is not None
