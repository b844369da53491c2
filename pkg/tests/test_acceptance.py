"""End-to-end acceptance checks.  Each test prints exactly one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from lvfa.cli import main as cli_main
from lvfa.conditions import check_H1, search_witness
from lvfa.dichotomy import build_certificate, linearize, verify_bounds
from lvfa.io import SPEC_DIR, bundled_spec, dumps
from lvfa.model import SupportSet, make_spec
from lvfa.odeint import integrate, integrate_matrix
from lvfa.skeleton import (
    box_violations,
    build_skeleton,
    classify_initial,
    detect_backward_unbounded,
    detect_regime,
    entry_time,
    extinction_envelope,
)
from lvfa.trajectories import compute_star, estimate_contraction, forward_attraction, list_complete_solutions, pullback_stability

# expected (nodes, edges) per bundled regime example
SKELETONS = {
    "perm2d": ("permanence", 4, 5),
    "extinct1_2d": ("extinction-of-1", 2, 1),
    "perm3d": ("permanence", 8, 19),
    "extinct1_3d": ("extinction-of-1", 4, 5),
    "extinct2_3d": ("extinction-of-2", 2, 1),
    "total2d": ("total-extinction", 1, 0),
    "total3d": ("total-extinction", 1, 0),
}
PERMANENCE = ["perm2d", "perm3d"]
EXTINCTION = ["extinct1_2d", "extinct1_3d", "extinct2_3d", "total2d", "total3d"]


def _box_witness(spec, regime):
    """``B`` witness for the regime (permanence uses ``B`` with ``I`` full)."""
    if regime.witness is not None and regime.witness.eps is not None:
        return regime.witness
    row = search_witness(spec, "H1").witness
    return search_witness(spec, "B", regime.persistent, c=row.c).witness


# 1 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_skeleton_counts(verdict):
    problems, summary = [], []
    for name, (kind, n_nodes, n_edges) in SKELETONS.items():
        spec, _ = bundled_spec(name)
        g = build_skeleton(spec)
        summary.append(f"{name} {len(g.nodes)}/{len(g.edges)}")
        if g.regime != kind or (len(g.nodes), len(g.edges)) != (n_nodes, n_edges):
            problems.append(f"{name}: {g.regime} {len(g.nodes)}/{len(g.edges)}, expected {kind} {n_nodes}/{n_edges}")
        problems += [f"{name}: {p}" for p in g.shape_problems()]
        problems += [f"{name}: alarm {a}" for a in g.alarms]
        for e in g.edges:
            if not (e.forward_error <= 1e-5 and e.backward_rate > 0 and e.backward_error <= 1e-4):
                problems.append(
                    f"{name}: edge {e.source.label()}->{e.target.label()} fwd {e.forward_error:.2g} "
                    f"bwd {e.backward_error:.2g} rate {e.backward_rate:.3g}"
                )
    ok = verdict(1, "skeleton node/edge counts", not problems, "; ".join(problems or summary))
    assert ok, problems


# 2 ------------------------------------------------------------------------------


def test_forward_attraction(verdict):
    start = time.perf_counter()
    errs = {}
    for name in PERMANENCE:
        spec, _ = bundled_spec(name)
        regime = detect_regime(spec)
        star = compute_star(spec, SupportSet.full(spec.n), window=(-5.0, 10.0))
        errs[name], _ = forward_attraction(spec, star, regime.witness.d, n_samples=20, t1=60.0, seed=42)
    elapsed = time.perf_counter() - start
    ok = all(e <= 1e-5 for e in errs.values()) and elapsed < 10.0
    detail = ", ".join(f"{k} max err {v:.2e}" for k, v in errs.items()) + f", {elapsed:.1f} s"
    assert verdict(2, "forward attraction to u*", ok, detail)


# 3 ------------------------------------------------------------------------------


def test_contraction_rate(verdict):
    cases = [("perm2d", [1.0, 1.0], [4.0, 4.0]), ("perm2d_periodic", [1.0, 5.0], [4.0, 0.5]), ("perm3d", [0.5, 1, 2], [3, 4, 2.5])]
    rows, ok = [], True
    for name, ua, ub in cases:
        spec, _ = bundled_spec(name)
        delta = search_witness(spec, "H2").witness.delta
        a_w = detect_regime(spec).witness
        horizon = 8.0
        ta, _, _ = entry_time(spec, a_w, ua, 0.0, horizon)
        tb, _, _ = entry_time(spec, a_w, ub, 0.0, horizon)
        est = estimate_contraction(spec, ua, ub, 0.0, horizon, delta=delta)
        entered = ta is not None and tb is not None and max(ta, tb) <= est.fit_window[0]
        good = entered and est.fitted_decay >= est.predicted_decay - 0.1
        ok &= good
        rows.append(f"{name}: fitted {est.fitted_decay:.4f} vs delta*sigma1 {est.predicted_decay:.4f}")
    assert verdict(3, "contraction rate >= delta*sigma1 - 0.1", ok, "; ".join(rows))


# 4 ------------------------------------------------------------------------------


def test_extinction_envelope(verdict):
    rng = np.random.default_rng(42)
    worst, ok = {}, True
    for name in EXTINCTION:
        spec, _ = bundled_spec(name)
        w = detect_regime(spec).witness
        ratios = []
        for _ in range(10):
            u0 = 2 * w.d * (1 - rng.random(spec.n))
            r, t_star = extinction_envelope(spec, w, u0, 0.0, 60.0)
            ok &= t_star is not None
            ratios.append(r)
        worst[name] = max(ratios)
    ok &= all(r <= 1 + 1e-6 for r in worst.values())
    assert verdict(4, "extinction envelope", ok, ", ".join(f"{k} max ratio {v:.6f}" for k, v in worst.items()))


# 5 ------------------------------------------------------------------------------


def test_box_invariance(verdict):
    counts = {}
    for name in SKELETONS:
        spec, _ = bundled_spec(name)
        w = _box_witness(spec, detect_regime(spec))
        for k in (0, 1, 3):
            counts[(name, k)] = box_violations(spec, w, k, n_samples=100, horizon=100.0, seed=42)
    total = sum(counts.values())
    bad = [f"{n} k={k}: {c}" for (n, k), c in counts.items() if c]
    assert verdict(5, "box invariance (100 starts x 3 boxes x 7 systems)", total == 0, "; ".join(bad) or "0 violations")


# 6 ------------------------------------------------------------------------------


def test_backward_unbounded(verdict):
    rng = np.random.default_rng(42)
    misses, latest = [], {}
    for name in EXTINCTION:
        spec, _ = bundled_spec(name)
        d = detect_regime(spec).witness.d
        times = []
        for _ in range(20):
            u0 = 2 * d * (1 - rng.random(spec.n))
            esc = detect_backward_unbounded(spec, u0, 0.0, 1e3, 500.0)
            if esc is None:
                misses.append(f"{name} {u0.tolist()}")
            else:
                times.append(esc)
        latest[name] = min(times) if times else math.nan
    detail = "; ".join(misses) or ", ".join(f"{k} slowest escape t={v:.1f}" for k, v in latest.items())
    assert verdict(6, "backward escape of positive data", not misses, detail)


# 7 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_dichotomy_certificates(verdict):
    problems, count = [], 0
    for name in PERMANENCE:
        spec, _ = bundled_spec(name)
        sols, failures = list_complete_solutions(spec, window=(-40.0, 50.0))
        problems += [f"{name} {k}: {v}" for k, v in failures.items()]
        for sol in sols:
            cert = build_certificate(linearize(spec, sol), window=(-10.0, 10.0))
            r4, r5 = verify_bounds(cert, refine=2, slack=1.05)
            k = sol.support.size
            count += 1
            if not (
                cert.residual_invariance <= 1e-6
                and cert.projector_residual <= 1e-8
                and r4 <= 1.0
                and r5 <= 1.0
                and (cert.stable_dim, cert.unstable_dim) == (k, spec.n - k)
            ):
                problems.append(
                    f"{name} {sol.label()}: inv {cert.residual_invariance:.2g} idem {cert.projector_residual:.2g} "
                    f"r4 {r4:.3f} r5 {r5:.3f} dims {cert.stable_dim}/{cert.unstable_dim}"
                )
    assert verdict(7, "dichotomy certificates", not problems and count == 12, "; ".join(problems) or f"{count} certificates")


# 8 ------------------------------------------------------------------------------


def _periodic_logistic_oracle(t):
    # v = 1/u solves v' = 1 - (2 + sin t) v; the bounded solution is an integral over the past
    kern = lambda s: math.exp(-(2 * (t - s) + math.cos(s) - math.cos(t)))  # noqa: E731
    v, _ = quad(kern, t - 60.0, t, limit=400, epsabs=1e-14, epsrel=1e-13)
    return 1.0 / v


def test_pullback_oracle(verdict):
    spec, _ = bundled_spec("logistic_periodic")
    star = compute_star(spec, SupportSet.full(1), window=(-5.0, 5.0))
    err = abs(star(0.0)[0] - _periodic_logistic_oracle(0.0))
    change = pullback_stability(star, (-5.0, 5.0))
    ok = err <= 1e-6 and change < 1e-8
    assert verdict(8, "periodic logistic pullback vs quadrature", ok, f"|u*(0) - oracle| = {err:.2e}, doubling change {change:.2e}")


# 9 ------------------------------------------------------------------------------


def _logistic_case(u0):
    # u(t) = u0 / (u0 + (1 - u0) e^{-t}): zero, the equilibrium, rises from 0, or blows up backward
    if u0 == 0:
        return "a"
    if u0 == 1:
        return "b"
    return "c" if u0 < 1 else "d"


@pytest.mark.slow
def test_logistic_classification(verdict):
    spec, _ = bundled_spec("logistic1d")
    sols, _ = list_complete_solutions(spec)
    regime = detect_regime(spec)
    rng = np.random.default_rng(42)
    u0s = list(3.0 * rng.random(194)) + [0.0, 0.0, 1.0, 1.0, 1e-9, 50.0]
    mismatches = []
    for u0 in u0s:
        got = classify_initial(spec, [u0], 0.0, sols, regime=regime).letter
        if got != _logistic_case(u0):
            mismatches.append((u0, got))
    assert verdict(9, "logistic classification (200 starts)", not mismatches, f"{len(mismatches)} mismatches {mismatches[:3]}")


# 10 -----------------------------------------------------------------------------


def test_order_and_cocycle(verdict):
    spec = make_spec(["1"], [["1"]], samples=11)
    exact = 1.0 / (1.0 + math.exp(-5.0))
    hs = [0.5, 0.25, 0.125, 0.0625]
    errs = [abs(integrate(spec, 0.0, np.array([0.5]), 5.0, h_fixed=h).final[0] - exact) for h in hs]
    factors = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    rtol = 1e-9
    per = make_spec(["1+0.5*sin(t)"], [["1"]], samples=11)
    cocycle = 0.0
    for t1 in (1.3, 2.7, 4.1):
        full = integrate(per, 0.0, np.array([0.2]), 6.0, rtol, 1e-12).final[0]
        mid = integrate(per, 0.0, np.array([0.2]), t1, rtol, 1e-12).final
        comp = integrate(per, t1, mid, 6.0, rtol, 1e-12).final[0]
        cocycle = max(cocycle, abs(comp - full) / abs(full))
    R = lambda t: np.array([[0.0, 1.0], [-1.0, 0.0]])  # noqa: E731
    mat = np.max(np.abs(integrate_matrix(R, 1, 2, rtol) @ integrate_matrix(R, 0, 1, rtol) - integrate_matrix(R, 0, 2, rtol)))
    ok = min(factors) >= 8 and cocycle <= 10 * rtol and mat <= 10 * rtol
    detail = f"halving factors {[round(float(f), 1) for f in factors]}, cocycle {cocycle:.1e}, matrix cocycle {mat:.1e}"
    assert verdict(10, "integrator order and cocycle", ok, detail)


# 11 -----------------------------------------------------------------------------


def test_h1_scale_and_determinism(verdict, capsys):
    rng = np.random.default_rng(42)
    flips = 0
    trials = 0
    for name in ["perm2d", "perm2d_periodic", "perm3d", "extinct1_3d", "total2d"]:
        spec, _ = bundled_spec(name)
        for _ in range(20):
            c = 0.1 + 3 * rng.random(spec.n)
            delta = 0.05 + 2 * rng.random()
            base = check_H1(spec, c, delta).verdict
            for lam in (0.1, 10.0):
                trials += 1
                flips += check_H1(spec, lam * c, lam * delta).verdict != base
    spec, _ = bundled_spec("perm3d")
    docs = {dumps(check_H1(spec, [1.0, 0.5, 2.0], 0.3).to_json()) for _ in range(3)}
    outs = set()
    for _ in range(2):
        cli_main(["check", "--h1", "--h2", "--a", str(SPEC_DIR / "perm2d.json")])
        outs.add(capsys.readouterr().out)
    ok = flips == 0 and len(docs) == 1 and len(outs) == 1
    assert verdict(11, "H1 scale invariance and JSON determinism", ok, f"{flips}/{trials} verdict flips, identical JSON: {len(docs) == 1 and len(outs) == 1}")
