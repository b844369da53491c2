"""Heteroclinic connections, backward escape, case classification and the
attractor skeleton (complete solutions plus the connections between them).

Regimes are decided from the condition checks: full-support permanence when
column dominance and ``A`` hold for all species, otherwise the largest
persistent set ``I`` for which row dominance, ``B(I, J)`` and column
dominance on ``I`` are certified (``I`` empty means total extinction).  The
nodes of the skeleton are the complete solutions on subsets of ``I`` and
every pair ``S`` strictly inside ``S'`` is a candidate edge.

Connections are traced by shooting from a linear unstable seed.  The
forward leg is a plain integration.  Integrating backward from the seed is
unstable in the source's own (attracting) directions, so the backward leg is
found by shooting forward instead: it starts on the source solution
``T_bwd`` earlier and the new species' initial values are corrected until
they reach the seed values at ``t0``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conditions import Witness, check_A, check_B, search_witness
from .dichotomy import DichotomyCertificate, build_certificate, linearize
from .model import SupportSet, SystemSpec, all_supports, subcommunity
from .odeint import TrajectoryGrid, dopri, integrate, integrate_batch
from .trajectories import CompleteSolution, list_complete_solutions, thread_count

__all__ = [
    "Regime",
    "Connection",
    "SkeletonGraph",
    "CaseLabel",
    "NoSeedError",
    "SeedRejected",
    "ConnectionNotFound",
    "RegimeInconsistency",
    "SkeletonIncomplete",
    "detect_regime",
    "unstable_seed",
    "trace_connection",
    "detect_backward_unbounded",
    "classify_initial",
    "build_skeleton",
    "box_violations",
    "entry_time",
    "extinction_envelope",
    "to_dot",
]

ALPHAS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
T_FWD = 40.0
T_BWD = 30.0
FWD_TOL = 1e-5
BWD_TOL = 1e-4
ESCAPE_NORM = 1e3
BACKWARD_HORIZON = 500.0
LEG_RTOL = 1e-11
LEG_ATOL = 1e-14
SHOOT_RTOL = 1e-9
SHOOT_ATOL = 1e-12
SHOOT_TOL = 1e-12
SHOOT_ITERS = 50
SAMPLE_DT = 0.05
EQUILIBRIUM_TOL = 1e-12


class NoSeedError(ValueError):
    """The base solution has no unstable directions."""


class SeedRejected(ValueError):
    """The seed leaves the positive cone at this amplitude (shrink alpha)."""


class ConnectionNotFound(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class RegimeInconsistency(RuntimeError):
    """A forward leg diverged although the regime predicts global attraction."""


class SkeletonIncomplete(RuntimeError):
    def __init__(self, message, missing):
        super().__init__(message)
        self.missing = missing


# -- regime ------------------------------------------------------------------------


@dataclass
class Regime:
    kind: str  # "permanence" | "extinction-of-k" | "total-extinction"
    persistent: SupportSet
    witness: Optional[Witness]  # A on the full support (permanence) or B(I, J)
    row: Optional[Witness] = None
    col: Optional[Witness] = None

    @property
    def extinct(self) -> tuple[int, ...]:
        return self.persistent.absent

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "persistent": self.persistent.label(),
            "witness": self.witness.to_json() if self.witness is not None else None,
        }


def _regime_name(n: int, I: SupportSet) -> str:
    if I.size == n:
        return "permanence"
    if I.size == 0:
        return "total-extinction"
    return f"extinction-of-{n - I.size}"


def detect_regime(spec: SystemSpec, witness: Optional[Witness] = None) -> Regime:
    """Certified regime of ``spec``.

    A supplied witness is used when it certifies its condition (``A`` when it
    has no ``eps``, ``B`` otherwise); otherwise witnesses are searched.
    """
    n = spec.n
    full = SupportSet.full(n)
    if witness is not None:
        if witness.eps is None and witness.support == full and witness.d is not None:
            if check_A(spec, witness.d, witness.dbar, full).passed and search_witness(spec, "H2").witness is not None:
                return Regime("permanence", full, witness)
        elif witness.eps is not None and witness.c is not None and check_B(spec, witness).passed:
            I = witness.support
            if I.size == 0 or search_witness(subcommunity(spec, I), "H2").witness is not None:
                return Regime(_regime_name(n, I), I, witness)
    col = search_witness(spec, "H2").witness
    if col is not None:
        a = search_witness(spec, "A", full)
        if a.witness is not None:
            return Regime("permanence", full, a.witness, col=col)
    row = search_witness(spec, "H1").witness
    if row is None:
        raise RegimeInconsistency("no regime certified: row dominance fails")
    for size in range(n, -1, -1):
        for I in itertools.combinations(range(n), size):
            sup = SupportSet(I, n)
            res = search_witness(spec, "B", sup, c=row.c)
            if res.witness is None:
                continue
            if size and search_witness(subcommunity(spec, sup), "H2").witness is None:
                continue
            w = res.witness
            w.delta_row = row.delta_row
            return Regime(_regime_name(n, sup), sup, w, row=row)
    raise RegimeInconsistency("no regime certified: neither A nor any B(I, J) holds")


# -- seeds and connections ---------------------------------------------------------


def unstable_seed(base: CompleteSolution, cert: DichotomyCertificate, t0: float, alpha: float, target=None) -> np.ndarray:
    """``base(t0) + alpha * v`` with ``v`` in the unstable space at ``t0``.

    ``v`` is chosen so that its absent-species block is the unit vector
    spread evenly over the species of ``target`` missing from ``base``
    (default: every absent species carrying an unstable direction).
    Species outside ``target`` stay exactly zero.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if cert.unstable_dim == 0:
        raise NoSeedError(f"{base.label()} has no unstable directions")
    n = base.n
    absent = list(base.support.absent)
    U = cert.unstable_basis(t0)
    if target is None:
        new = [k for k in absent if np.linalg.norm(U[k]) > 1e-6]
    else:
        tsup = target.support if isinstance(target, CompleteSolution) else target
        new = [k for k in tsup.present if k not in base.support]
    if not new:
        raise NoSeedError("target adds no species to the base support")
    y = np.zeros(n)
    y[new] = 1.0 / math.sqrt(len(new))
    coef, *_ = np.linalg.lstsq(U[absent], y[absent], rcond=None)
    v = U @ coef
    miss = float(np.linalg.norm(v[absent] - y[absent]))
    if miss > 1e-6:
        raise NoSeedError(f"unstable space at {base.label()} does not reach {sorted(k + 1 for k in new)} (residual {miss:.2g})")
    v[absent] = y[absent]  # exact zeros off the target face, exact seed direction on it
    state = np.asarray(base(t0), dtype=float) + alpha * v
    keep = list(base.support.present) + new
    if np.any(state[keep] <= 0):
        raise SeedRejected(f"seed leaves the positive cone at alpha={alpha:g}")
    out = np.zeros(n)
    out[keep] = state[keep]
    return out


@dataclass
class Connection:
    source: SupportSet
    target: SupportSet
    seed_time: float
    seed_amplitude: float
    forward_error: float
    backward_error: float
    trajectory: TrajectoryGrid
    backward_rate: float = math.nan
    seed_defect: float = math.nan
    shooting_mismatch: float = math.nan
    iterations: int = 0
    attempts: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "source": self.source.label(),
            "target": self.target.label(),
            "seed_time": self.seed_time,
            "seed_amplitude": self.seed_amplitude,
            "forward_error": self.forward_error,
            "backward_error": self.backward_error,
            "backward_rate": self.backward_rate,
            "seed_defect": self.seed_defect,
            "shooting_mismatch": self.shooting_mismatch,
            "iterations": self.iterations,
            "span": list(self.trajectory.span),
        }


def _leg_norm(k: int, rtol: float, atol: float):
    """Error norm for the joint state ``(xi, eta)``: ``xi`` (first ``k``
    entries) relative to itself, so deviations of any magnitude are resolved;
    ``eta`` (log densities) with the usual mixed tolerance."""

    def norm(err, y_old, y_new):
        big = np.maximum(np.abs(y_old), np.abs(y_new))
        scale = np.concatenate([1e-300 + rtol * big[:k], atol + rtol * big[k:]])
        return float(np.sqrt(np.mean((err / scale) ** 2))) if err.size else 0.0

    return norm


def _backward_leg(spec: SystemSpec, source: CompleteSolution, z0, t0: float, T_b: float):
    """Trajectory on ``[t0 - T_b, t0]`` that sits on the source solution at
    ``t0 - T_b`` and has the new-species values of ``z0`` at ``t0``.

    The source species are carried as ``xi = log(x / u_src)`` and the new
    ones as ``eta = log y``.  Starting from ``xi = 0`` the joint system is
    integrated forward and ``eta(t0 - T_b)`` is corrected by the mismatch at
    ``t0`` until it vanishes (the map is the identity up to ``O(|y|)``).
    Returns ``(dense, k, x_idx, y_idx, iterations, mismatch)`` where the dense
    output interpolates ``(xi, eta)``.
    """
    xs = np.array(source.support.present, dtype=int)
    ys = np.array([k for k in range(spec.n) if z0[k] > 0 and k not in source.support], dtype=int)
    k = xs.size
    coeffs = spec.coefficients
    t_a = t0 - T_b
    log_y0 = np.log(z0[ys])
    spline = source._spline
    autonomous = spec.autonomous
    u_const = source(t0)[xs] if k else np.zeros(0)

    def u_src(t):
        if not k or autonomous:
            return u_const
        return spline(t)[xs]

    ixx, ixy, iyx, iyy = np.ix_(xs, xs), np.ix_(xs, ys), np.ix_(ys, xs), np.ix_(ys, ys)

    def eta_rhs(t, eta):
        a, b = coeffs(t)
        return a[ys] - b[iyx] @ u_src(t) - b[iyy] @ np.exp(eta)

    def joint_rhs(t, w):
        a, b = coeffs(t)
        xi, y = w[:k], np.exp(w[k:])
        u = u_src(t)
        dxi = -b[ixx] @ (u * np.expm1(xi)) - b[ixy] @ y
        deta = a[ys] - b[iyx] @ (u * np.exp(xi)) - b[iyy] @ y
        return np.concatenate([dxi, deta])

    # initial guess: the new species grow along the source, which is exact when k == 0
    eta_a = dopri(eta_rhs, t0, log_y0, t_a, LEG_RTOL, LEG_ATOL, dense=False).y[-1]
    norm = _leg_norm(k, SHOOT_RTOL, SHOOT_ATOL)
    mismatch = math.inf
    for it in range(1, SHOOT_ITERS + 1):
        sol = dopri(joint_rhs, t_a, np.concatenate([np.zeros(k), eta_a]), t0, SHOOT_RTOL, SHOOT_ATOL, norm=norm, h0=1e-3)
        miss = sol.y[-1][k:] - log_y0
        mismatch = float(np.max(np.abs(miss)))
        if mismatch <= SHOOT_TOL:
            return sol.dense, k, xs, ys, it, mismatch
        eta_a = eta_a - miss
    warnings.warn(f"backward leg did not settle in {SHOOT_ITERS} iterations (mismatch {mismatch:.3g})", stacklevel=3)
    return sol.dense, k, xs, ys, SHOOT_ITERS, mismatch


def _fit_growth(ts, dist):
    """Slope of log(dist) against t (positive when dist decays backward)."""
    good = dist > 0
    if np.count_nonzero(good) < 3:
        return math.inf if np.all(dist == 0) else math.nan
    return float(np.polyfit(ts[good], np.log(dist[good]), 1)[0])


def trace_connection(
    spec: SystemSpec,
    source: CompleteSolution,
    target: CompleteSolution,
    cert: DichotomyCertificate,
    t0: float = 0.0,
    T_fwd: float = T_FWD,
    T_bwd: float = T_BWD,
    tol: float = FWD_TOL,
    *,
    tol_back: float = BWD_TOL,
    alphas=ALPHAS,
) -> Connection:
    """Shoot from the unstable seed of ``source`` towards ``target``.

    For each amplitude in ``alphas`` (largest first) the seed is carried
    forward to ``t0 + T_fwd`` and backward to ``t0 - T_bwd``; the first
    amplitude whose forward error is at most ``tol``, whose backward error is
    at most ``tol_back`` and whose distance to the source decreases
    monotonically (backward in time) with a positive fitted rate over the
    earlier half of the backward window is accepted.
    """
    if source.support == target.support:
        raise ValueError("source and target must differ")
    if not source.support.is_proper_subset(target.support):
        raise ValueError(f"connections go to larger supports: {source.label()} -> {target.label()}")
    n = spec.n
    t_a, t_b = t0 - T_bwd, t0 + T_fwd
    ts_b = np.linspace(t_a, t0, int(round(T_bwd / SAMPLE_DT)) + 1)
    src_b = source(ts_b)
    attempts = []
    for alpha in alphas:
        try:
            seed = unstable_seed(source, cert, t0, alpha, target)
        except SeedRejected as exc:
            attempts.append({"alpha": alpha, "reason": str(exc)})
            continue
        dense, k, xs, ys, iters, mismatch = _backward_leg(spec, source, seed, t0, T_bwd)
        w = dense(ts_b)
        back = np.zeros((ts_b.size, n))
        dev = np.zeros((ts_b.size, n))  # back - source, without cancellation
        back[:, ys] = dev[:, ys] = np.exp(w[:, k:])
        if k:
            dev[:, xs] = src_b[:, xs] * np.expm1(w[:, :k])
            back[:, xs] = src_b[:, xs] + dev[:, xs]
        back[-1, ys] = seed[ys]
        z0 = back[-1].copy()
        seed_defect = float(np.linalg.norm(z0 - seed))
        fwd = integrate(spec, t0, z0, t_b, LEG_RTOL, LEG_ATOL, escape=1e6)
        if fwd.escape_time is not None:
            raise RegimeInconsistency(
                f"forward leg {source.label()} -> {target.label()} escaped at t={fwd.escape_time:.4g}"
            )
        forward_error = float(np.linalg.norm(fwd.final - target(t_b)))
        dist = np.linalg.norm(dev, axis=1)
        backward_error = float(dist[0])
        half = ts_b <= t0 - 0.5 * T_bwd
        monotone = bool(np.all(np.diff(dist[half]) > 0))
        rate = _fit_growth(ts_b[half], dist[half])
        ok = forward_error <= tol and backward_error <= tol_back and monotone and rate > 0
        attempts.append(
            {
                "alpha": alpha,
                "forward_error": forward_error,
                "backward_error": backward_error,
                "monotone": monotone,
                "rate": rate,
                "shooting_mismatch": mismatch,
            }
        )
        if not ok:
            continue
        fwd_ts = fwd.times[fwd.times > t0]
        times = np.concatenate([ts_b, fwd_ts])
        states = np.concatenate([back, fwd.states[fwd.times > t0]])
        grid = TrajectoryGrid(times, states, target.support, meta={"seed": seed.tolist()})
        return Connection(
            source.support,
            target.support,
            float(t0),
            float(alpha),
            forward_error,
            backward_error,
            grid,
            rate,
            seed_defect,
            mismatch,
            iters,
            attempts,
        )
    raise ConnectionNotFound(
        f"no connection {source.label()} -> {target.label()} for alpha down to {alphas[-1]:g}", attempts
    )


# -- backward escape and classification --------------------------------------------


def detect_backward_unbounded(
    spec: SystemSpec, u0, t0: float = 0.0, escape_norm: float = ESCAPE_NORM, horizon: float = BACKWARD_HORIZON
) -> Optional[float]:
    """Time at which the backward solution from ``u0`` leaves the ball of radius
    ``escape_norm``, or ``None`` when it stays inside up to ``t0 - horizon``
    (inconclusive).

    An equilibrium of an autonomous system is reported as ``None`` directly:
    backward integration would otherwise amplify round-off away from it
    (equilibria that attract forward repel backward).
    """
    u0 = np.asarray(u0, dtype=float)
    if not np.any(u0 > 0):
        return None
    if spec.autonomous:
        f = spec.vector_field(t0, u0)
        if np.max(np.abs(f)) <= EQUILIBRIUM_TOL * max(1.0, float(np.max(u0))) ** 2:
            return None
    g = integrate(spec, t0, u0, t0 - horizon, 1e-9, 1e-12, escape=escape_norm, dense=False)
    return g.escape_time


@dataclass
class CaseLabel:
    letter: str  # "a", "b", ... or "unbounded" / "unclassified"
    regime: str
    support: str
    forward_limit: Optional[str]
    backward: Optional[str]  # source label, "unbounded" or None (node / zero)
    forward_error: float = math.nan
    escape_time: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "case": self.letter,
            "regime": self.regime,
            "support": self.support,
            "forward_limit": self.forward_limit,
            "backward": self.backward,
            "forward_error": self.forward_error,
            "escape_time": self.escape_time,
            "diagnostics": self.diagnostics,
        }


def _bounded_letter(I: tuple, S: tuple, kind: str, B: Optional[tuple]) -> str:
    """Case letter of a bounded complete trajectory with support ``S`` inside
    the persistent set ``I`` (``kind`` is ``node`` or ``connection`` from ``B``)."""
    m, s = len(I), len(S)
    if m == 1:
        return "b" if kind == "node" else "c"
    if m == 2:
        if s == 1:
            return "b" if kind == "node" else "c"
        if kind == "node":
            return "d"
        return "e" if not B else "f"
    # m == 3
    if s == 1:
        return "b" if kind == "node" else "c"
    if s == 2:
        if kind == "node":
            return "d"
        if not B:
            return "e"
        return {(0, 1): "f", (0, 2): "g", (1, 2): "h"}[tuple(sorted(I.index(k) for k in S))]
    if kind == "node":
        return "i"
    return {0: "j", 2: "k", 1: "l"}[len(B)]


def _unbounded_letter(n: int, I: tuple, S: tuple) -> str:
    """Case letter of a backward-unbounded trajectory (extinction regimes and 1-D)."""
    m = len(I)
    inside = set(S) <= set(I)
    if n == 1 and m == 1:
        return "d"
    if m == n or m == 0:
        return "unbounded"
    if n == 2:  # I = {p}
        if len(S) == 2:
            return "d"
        return "f" if inside else "e"
    if m == 2:  # I = {p, q}, r extinct
        if len(S) == 3:
            return "g"
        if len(S) == 1:
            return "i" if inside else "h"
        return "unbounded" if inside else "j"
    # m == 1: I = {p}
    if len(S) == 3:
        return "d"
    if len(S) == 1:
        return "f" if inside else "e"
    return "h" if I[0] in S else "g"


def classify_initial(
    spec: SystemSpec,
    u0,
    t0: float,
    solutions,
    tol: float = 1e-6,
    regime: Optional[Regime] = None,
    *,
    T_fwd: float = 60.0,
    T_fwd_max: float = 480.0,
    T_back: float = 30.0,
    back_tol: float = 1e-4,
) -> CaseLabel:
    """Case of the trajectory through ``u0`` at ``t0`` among the regime's list.

    Support is read from exact zeros.  The forward limit is the node within
    ``tol`` at ``t0 + T`` (``T`` doubling up to ``T_fwd_max``); the backward
    behaviour is an escape of norm 1e3 within horizon 500, or else the node
    within ``back_tol`` at ``t0 - T_back``.
    """
    u0 = np.asarray(u0, dtype=float)
    n = spec.n
    regime = regime or detect_regime(spec)
    I = regime.persistent.present
    S = SupportSet.of(u0, n)
    nodes = {sol.support: sol for sol in solutions}
    base = CaseLabel("unclassified", regime.kind, S.label(), None, None)
    if S.size == 0:
        base.letter, base.forward_limit, base.forward_error = "a", S.label(), 0.0
        return base
    node = nodes.get(S)
    if node is not None:
        gap = float(np.linalg.norm(u0 - node(t0)))
        if gap <= tol * max(1.0, float(np.linalg.norm(u0))):
            base.letter = _bounded_letter(I, S.present, "node", None)
            base.forward_limit, base.forward_error = S.label(), gap
            return base
    # forward limit
    T = T_fwd
    while True:
        g = integrate(spec, t0, u0, t0 + T, 1e-11, 1e-14, escape=1e8, dense=False)
        if g.escape_time is not None:
            base.diagnostics["forward_escape"] = g.escape_time
            return base
        errs = {sup: float(np.linalg.norm(g.final - sol(t0 + T))) for sup, sol in nodes.items()}
        best = min(errs, key=errs.get)
        if errs[best] <= tol or 2 * T > T_fwd_max:
            break
        T *= 2
    base.forward_error = errs[best]
    base.diagnostics["forward_horizon"] = T
    if errs[best] > tol:
        base.diagnostics["forward_distances"] = {k.label(): v for k, v in errs.items()}
        return base
    base.forward_limit = best.label()
    # backward behaviour
    esc = detect_backward_unbounded(spec, u0, t0)
    if esc is not None:
        base.backward, base.escape_time = "unbounded", esc
        base.letter = _unbounded_letter(n, I, S.present)
        return base
    lo = max((sol.window[0] for sol in nodes.values() if not sol.is_zero), default=-math.inf)
    t_back = max(t0 - T_back, lo)
    g = integrate(spec, t0, u0, t_back, 1e-11, 1e-14, dense=False)
    back = {sup: float(np.linalg.norm(g.states[0] - sol(t_back))) for sup, sol in nodes.items() if sup.issubset(S)}
    src = min(back, key=back.get)
    base.diagnostics["backward_distance"] = back[src]
    if back[src] > back_tol or src == S:
        return base
    base.backward = src.label()
    if not S.issubset(regime.persistent):
        base.diagnostics["alarm"] = "bounded trajectory outside the persistent set"
        return base
    base.letter = _bounded_letter(I, S.present, "connection", src.present)
    return base


# -- box invariance and extinction envelope ---------------------------------------


def _box(witness: Witness, k: float) -> np.ndarray:
    return witness.d + k * witness.theta * witness.c


def box_violations(
    spec: SystemSpec, witness: Witness, k: float, n_samples: int = 100, horizon: float = 100.0, t0: float = 0.0, seed: int = 42
) -> int:
    """Number of random starts in ``prod [0, d_i + k theta c_i)`` whose
    forward trajectory leaves the box before ``t0 + horizon``."""
    rng = np.random.default_rng(seed)
    top = _box(witness, k)
    U0 = top * (1.0 - rng.random((n_samples, spec.n)))  # (0, top]
    U0 = np.minimum(U0, np.nextafter(top, 0))
    g = integrate_batch(spec, t0, U0, t0 + horizon, 1e-10, 1e-13)
    ts = np.linspace(t0, g.span[1], int(round(horizon / 0.01)) + 1)
    states = np.concatenate([g.states, g(ts)])  # step points and a fine dense sample
    outside = np.any(states >= top[None, None, :], axis=(0, 2))
    return int(np.count_nonzero(outside)) + (0 if g.escape_time is None else n_samples)


def entry_time(spec: SystemSpec, witness: Witness, u0, t0: float = 0.0, horizon: float = 100.0, dt: float = 0.01):
    """First sampled time after which ``dbar_i < u_i < d_i`` on ``I`` and
    ``u_j < d_j`` on ``J`` hold; returns ``(t_star, persists, grid)``."""
    g = integrate(spec, t0, u0, t0 + horizon, 1e-11, 1e-14)
    ts = np.linspace(t0, t0 + horizon, int(round(horizon / dt)) + 1)
    U = g(ts)
    I = list(witness.support.present)
    inside = np.all(U < witness.d[None, :], axis=1)
    if I:
        inside &= np.all(U[:, I] > witness.dbar[None, I], axis=1)
    hit = np.flatnonzero(inside)
    if hit.size == 0:
        return None, False, (ts, U)
    k = int(hit[0])
    return float(ts[k]), bool(np.all(inside[k:])), (ts, U)


def extinction_envelope(spec: SystemSpec, witness: Witness, u0, t0: float = 0.0, horizon: float = 60.0):
    """Largest ratio ``u_j(t) / (d_j exp(-eps (t - t*)))`` over ``j`` in ``J`` and
    sampled ``t >= t*``; returns ``(ratio, t_star)``."""
    t_star, _, (ts, U) = entry_time(spec, witness, u0, t0, horizon)
    J = list(witness.support.absent)
    if t_star is None:
        return math.inf, None
    after = ts >= t_star
    env = witness.d[None, J] * np.exp(-witness.eps * (ts[after] - t_star))[:, None]
    ratio = U[after][:, J] / env
    return float(np.max(ratio)) if ratio.size else 0.0, t_star


# -- skeleton ------------------------------------------------------------------------


@dataclass
class SkeletonGraph:
    nodes: list  # support labels
    edges: list  # Connection records
    regime: str
    unbounded_note: bool
    solutions: list = field(default_factory=list, repr=False)
    certificates: dict = field(default_factory=dict, repr=False)
    annotations: list = field(default_factory=list)
    alarms: list = field(default_factory=list)
    regime_info: Optional[Regime] = None

    def edge_pairs(self) -> list[tuple[str, str]]:
        return [(e.source.label(), e.target.label()) for e in self.edges]

    def shape_problems(self) -> list[str]:
        """Violations of: zero is the unique source, the stable node is a sink, acyclic."""
        out = []
        indeg = {v: 0 for v in self.nodes}
        outdeg = {v: 0 for v in self.nodes}
        for s, t in self.edge_pairs():
            outdeg[s] += 1
            indeg[t] += 1
        zero = "{}"
        if zero not in indeg or indeg[zero] != 0:
            out.append("zero solution has incoming edges or is missing")
        sources = [v for v in self.nodes if indeg[v] == 0]
        if len(self.nodes) > 1 and sources != [zero]:
            out.append(f"source nodes {sources} (expected only the zero solution)")
        top = max(self.nodes, key=lambda v: v.count(",") + (v != zero))
        if outdeg[top] != 0:
            out.append(f"globally stable node {top} has outgoing edges")
        # edges always increase support size, so the graph is acyclic iff every
        # edge is a strict inclusion
        for e in self.edges:
            if not e.source.is_proper_subset(e.target):
                out.append(f"edge {e.source.label()} -> {e.target.label()} is not a strict inclusion")
        return out

    def to_json(self, trajectory_files: Optional[dict] = None) -> dict:
        trajectory_files = trajectory_files or {}
        node_docs = []
        for sol in self.solutions:
            node_docs.append(sol.to_json())
        edges = []
        for e in self.edges:
            doc = e.to_json()
            doc["trajectory_file"] = trajectory_files.get((e.source.label(), e.target.label()))
            edges.append(doc)
        return {
            "regime": self.regime,
            "persistent": self.regime_info.persistent.label() if self.regime_info else None,
            "witness": self.regime_info.witness.to_json() if self.regime_info and self.regime_info.witness else None,
            "nodes": node_docs,
            "edges": edges,
            "counts": {"nodes": len(self.nodes), "edges": len(self.edges)},
            "unbounded_note": self.unbounded_note,
            "annotations": self.annotations,
            "alarms": self.alarms,
        }


def to_dot(graph: SkeletonGraph) -> str:
    """Graphviz rendering of the skeleton (nodes by support, edges by connection)."""
    lines = ["digraph skeleton {", f'  label="{graph.regime}";', "  rankdir=BT;"]
    for v in graph.nodes:
        lines.append(f'  "{v}";')
    for e in graph.edges:
        lines.append(f'  "{e.source.label()}" -> "{e.target.label()}" [label="alpha={e.seed_amplitude:g}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _annotate(spec: SystemSpec, regime: Regime, nodes: dict, t0: float, seed: int, per_support: int = 3):
    """Forward limits and backward escapes of random data off the persistent set."""
    rng = np.random.default_rng(seed)
    notes, alarms = [], []
    d = regime.witness.d if regime.witness is not None and regime.witness.d is not None else np.ones(spec.n)
    for sup in all_supports(spec.n):
        if sup.size == 0 or sup.issubset(regime.persistent):
            continue
        for _ in range(per_support):
            u0 = np.zeros(spec.n)
            idx = list(sup.present)
            u0[idx] = 2 * d[idx] * (1.0 - rng.random(len(idx)))
            g = integrate(spec, t0, u0, t0 + 60.0, 1e-10, 1e-13, dense=False)
            errs = {s.label(): float(np.linalg.norm(g.final - sol(t0 + 60.0))) for s, sol in nodes.items()}
            limit = min(errs, key=errs.get)
            esc = detect_backward_unbounded(spec, u0, t0)
            notes.append(
                {
                    "support": sup.label(),
                    "u0": u0.tolist(),
                    "forward_limit": limit,
                    "forward_error": errs[limit],
                    "escape_time": esc,
                }
            )
            if esc is None:
                alarms.append(f"start {u0.tolist()} on {sup.label()} did not escape backward within {BACKWARD_HORIZON}")
    return notes, alarms


def build_skeleton(
    spec: SystemSpec,
    witnesses: Optional[dict] = None,
    *,
    regime: Optional[Regime] = None,
    window=(-40.0, 50.0),
    t0: float = 0.0,
    T_fwd: float = T_FWD,
    T_bwd: float = T_BWD,
    tol: float = FWD_TOL,
    annotate: bool = True,
    seed: int = 42,
) -> SkeletonGraph:
    """Nodes, certified connections and regime annotations for ``spec``.

    ``witnesses`` maps supports to node witnesses (``A_I``); the key
    ``"regime"`` may carry a witness for the regime condition.
    """
    witnesses = dict(witnesses or {})
    regime = regime or detect_regime(spec, witnesses.pop("regime", None))
    P = regime.persistent
    supports = [s for s in all_supports(spec.n) if s.issubset(P)]
    sols, failures = list_complete_solutions(spec, witnesses, window, supports=supports)
    if failures:
        raise SkeletonIncomplete(f"complete solutions not certified: {failures}", sorted(failures))
    nodes = {s.support: s for s in sols}
    pairs = [(s, t) for s in supports for t in supports if s.is_proper_subset(t)]

    def certify(sup):
        ls = linearize(spec, nodes[sup])
        cert = build_certificate(ls, window=(t0 - 10.0, t0 + 10.0), cross_check=False)
        expected = P.size - sup.size
        if cert.unstable_dim != expected:
            raise RegimeInconsistency(
                f"linearization at {sup.label()} has {cert.unstable_dim} unstable directions, expected {expected}"
            )
        return sup, cert

    sources = sorted({s for s, _ in pairs}, key=lambda s: (s.size, s.present))

    def trace(pair):
        s, t = pair
        try:
            return pair, trace_connection(spec, nodes[s], nodes[t], certs[s], t0, T_fwd, T_bwd, tol), None
        except ConnectionNotFound as exc:
            return pair, None, exc

    workers = thread_count()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                certs = dict(pool.map(certify, sources))
                results = list(pool.map(trace, pairs))
        else:
            certs = dict(certify(s) for s in sources)
            results = [trace(p) for p in pairs]
    missing = [(s.label(), t.label(), str(exc)) for (s, t), conn, exc in results if conn is None]
    if missing:
        raise SkeletonIncomplete(f"connections not found: {[(m[0], m[1]) for m in missing]}", missing)
    edges = [conn for _, conn, _ in results]
    ordered = sorted(sols, key=lambda s: (s.support.size, s.support.present))
    graph = SkeletonGraph(
        [s.label() for s in ordered],
        edges,
        regime.kind,
        regime.kind != "permanence",
        ordered,
        certs,
        regime_info=regime,
    )
    if annotate and regime.kind != "permanence":
        graph.annotations, graph.alarms = _annotate(spec, regime, nodes, t0, seed)
    graph.alarms.extend(graph.shape_problems())
    return graph
