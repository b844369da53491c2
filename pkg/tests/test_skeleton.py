import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lvfa.conditions import search_witness
from lvfa.dichotomy import build_certificate, linearize
from lvfa.io import bundled_spec
from lvfa.model import SupportSet, make_spec
from lvfa.skeleton import (
    NoSeedError,
    SeedRejected,
    box_violations,
    build_skeleton,
    classify_initial,
    detect_backward_unbounded,
    detect_regime,
    extinction_envelope,
    to_dot,
    trace_connection,
    unstable_seed,
)
from lvfa.trajectories import list_complete_solutions


@pytest.fixture(scope="module")
def perm2_graph():
    spec, _ = bundled_spec("perm2d")
    return spec, build_skeleton(spec)


@pytest.fixture(scope="module")
def logistic():
    spec, _ = bundled_spec("logistic1d")
    sols, _ = list_complete_solutions(spec)
    return spec, sols, detect_regime(spec)


def _node(graph, label):
    return next(s for s in graph.solutions if s.label() == label)


def test_regimes():
    expected = {
        "perm2d": ("permanence", "{1,2}"),
        "extinct1_2d": ("extinction-of-1", "{1}"),
        "total2d": ("total-extinction", "{}"),
        "extinct2_3d": ("extinction-of-2", "{1}"),
    }
    for name, (kind, persistent) in expected.items():
        spec, _ = bundled_spec(name)
        reg = detect_regime(spec)
        assert (reg.kind, reg.persistent.label()) == (kind, persistent), name


def test_perm2_graph(perm2_graph):
    _, g = perm2_graph
    assert sorted(g.nodes) == ["{1,2}", "{1}", "{2}", "{}"]
    assert sorted(g.edge_pairs()) == sorted(
        [("{}", "{1}"), ("{}", "{2}"), ("{}", "{1,2}"), ("{1}", "{1,2}"), ("{2}", "{1,2}")]
    )
    assert g.shape_problems() == []
    assert g.alarms == []
    for e in g.edges:
        assert e.forward_error <= 1e-5
        assert e.backward_error <= 1e-4
        assert e.backward_rate > 0


def test_dot(perm2_graph):
    dot = to_dot(perm2_graph[1])
    assert dot.startswith("digraph") and dot.count("->") == 5


def test_seed_around_semitrivial(perm2_graph):
    spec, g = perm2_graph
    src = _node(g, "{1}")
    cert = g.certificates[src.support]
    seed = unstable_seed(src, cert, 0.0, 1e-3)
    L = cert.P(0.0)[0, 1]
    # (u_hat_1 - alpha L, alpha): the unstable direction is (-L, 1)
    assert seed[1] == pytest.approx(1e-3, rel=1e-12)
    assert seed[0] == pytest.approx(1.5 - 1e-3 * L, abs=1e-10)
    with pytest.raises(ValueError):
        unstable_seed(src, cert, 0.0, 0.0)


def test_seed_at_zero(perm2_graph):
    spec, g = perm2_graph
    z = _node(g, "{}")
    seed = unstable_seed(z, g.certificates[z.support], 0.0, 1e-2)
    assert np.allclose(seed, 1e-2 / math.sqrt(2), rtol=1e-12)


def test_no_seed_at_stable_node(perm2_graph):
    spec, g = perm2_graph
    top = _node(g, "{1,2}")
    cert = build_certificate(linearize(spec, top), cross_check=False)
    with pytest.raises(NoSeedError):
        unstable_seed(top, cert, 0.0, 1e-3)


def test_seed_rejected_for_large_alpha(perm2_graph):
    spec, g = perm2_graph
    src = _node(g, "{1}")
    cert = g.certificates[src.support]
    L = cert.P(0.0)[0, 1]
    if L > 0:  # the first coordinate goes negative once alpha L > u_hat_1
        with pytest.raises(SeedRejected):
            unstable_seed(src, cert, 0.0, 2 * 1.5 / L)


def test_trace_preconditions(perm2_graph):
    spec, g = perm2_graph
    a, b = _node(g, "{1}"), _node(g, "{2}")
    with pytest.raises(ValueError):
        trace_connection(spec, a, a, g.certificates[a.support])
    with pytest.raises(ValueError):
        trace_connection(spec, a, b, g.certificates[a.support])


def test_trace_semitrivial_to_star(perm2_graph):
    spec, g = perm2_graph
    src, tgt = _node(g, "{1}"), _node(g, "{1,2}")
    conn = trace_connection(spec, src, tgt, g.certificates[src.support])
    assert conn.forward_error < 1e-5
    assert np.allclose(conn.trajectory(40.0), 3.0, atol=1e-5)


def test_backward_unbounded_examples():
    spec = make_spec(["0-1"], [["1"]], samples=11)
    esc = detect_backward_unbounded(spec, [0.5], 0.0)
    # u(-s) >= 0.5 e^{s} crosses 1e3 at s = ln 2000 ~ 7.6
    assert esc is not None and -math.log(2000) - 1e-6 <= esc < 0 and esc > -8
    perm, _ = bundled_spec("perm2d")
    assert detect_backward_unbounded(perm, [3.0, 3.0], 0.0) is None
    ext, _ = bundled_spec("extinct1_2d")
    assert detect_backward_unbounded(ext, [0.3, 0.2], 0.0) is not None


@pytest.mark.parametrize("u0, case", [(0.0, "a"), (0.5, "c"), (1.0, "b"), (2.0, "d")])
def test_logistic_cases(logistic, u0, case):
    spec, sols, reg = logistic
    assert classify_initial(spec, [u0], 0.0, sols, regime=reg).letter == case


def test_logistic_escape_time(logistic):
    spec, sols, reg = logistic
    lab = classify_initial(spec, [2.0], 0.0, sols, regime=reg)
    # u(t) = 1 / (1 - 0.5 e^{-t}) reaches 1e3 at t = -ln(2 * 0.999), just before the pole at -ln 2
    assert lab.escape_time == pytest.approx(-math.log(2 * 0.999), abs=1e-6)


def test_perm2_classification_totality(perm2_graph):
    spec, g = perm2_graph
    rng = np.random.default_rng(3)
    for _ in range(5):
        u0 = 6 * (1 - rng.random(2))
        assert classify_initial(spec, u0, 0.0, g.solutions, regime=g.regime_info).forward_limit == "{1,2}"


def test_extinct1_2d_skeleton():
    spec, _ = bundled_spec("extinct1_2d")
    g = build_skeleton(spec)
    assert (len(g.nodes), len(g.edges)) == (2, 1)
    assert g.unbounded_note and g.alarms == []
    assert all(a["escape_time"] is not None for a in g.annotations)


def test_total_extinction_skeleton():
    spec, _ = bundled_spec("total2d")
    g = build_skeleton(spec)
    assert g.nodes == ["{}"] and g.edges == []


def test_box_and_envelope():
    spec, _ = bundled_spec("extinct1_2d")
    reg = detect_regime(spec)
    w = reg.witness
    for k in (0, 1, 3):
        assert box_violations(spec, w, k, n_samples=20, horizon=30.0) == 0
    ratio, t_star = extinction_envelope(spec, w, [2.0, 3.0])
    assert t_star is not None and ratio <= 1 + 1e-6


def test_permanence_box_with_B_witness():
    spec, _ = bundled_spec("perm2d")
    row = search_witness(spec, "H1").witness
    w = search_witness(spec, "B", SupportSet.full(2), c=row.c).witness
    assert w is not None
    assert box_violations(spec, w, 1, n_samples=20, horizon=30.0) == 0


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 10.0))
def test_logistic_classification_property(u0):
    spec = make_spec(["1"], [["1"]], samples=11)
    sols, _ = list_complete_solutions(spec, window=(-40.0, 50.0))
    reg = detect_regime(spec)
    lab = classify_initial(spec, [u0], 0.0, sols, regime=reg)
    if u0 == 1.0:
        assert lab.letter == "b"
    else:
        assert lab.letter == ("c" if u0 < 1 else "d")
