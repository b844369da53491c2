"""Complete bounded trajectories by pullback iteration, and contraction estimates."""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .conditions import Witness, check_A, search_witness
from .model import SupportSet, SystemSpec, all_supports, embed, subcommunity
from .odeint import TrajectoryGrid, integrate, integrate_batch

__all__ = [
    "NonConvergenceError",
    "CertificateInconsistency",
    "CompleteSolution",
    "ContractionEstimate",
    "compute_star",
    "pullback_stability",
    "estimate_contraction",
    "list_complete_solutions",
    "forward_attraction",
    "zero_solution",
]

T0 = 20.0
T_MAX = 1280.0
SPACING = 0.01
RTOL = 1e-11
ATOL = 1e-14


class NonConvergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class CertificateInconsistency(RuntimeError):
    pass


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("LVFA_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(eq=False)
class CompleteSolution:
    """A complete trajectory with support ``support`` stored on a uniform grid.

    Calls inside the window use a cubic Hermite interpolant (nodes every
    ``SPACING``, derivatives from the vector field); calls after the window
    integrate forward from its right end.  Backward extension is refused.
    """

    support: SupportSet
    grid: TrajectoryGrid
    certified_bounds: np.ndarray  # (n, 2): [dbar_i, d_i] on I, [0, 0] on J
    pullback_horizon: float
    convergence_residual: float
    spec: SystemSpec
    tol: float = 1e-8
    residual_history: list = field(default_factory=list)
    witness: Optional[Witness] = None
    _spline: Optional[CubicHermiteSpline] = field(default=None, repr=False)
    _ext: list = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def window(self) -> tuple[float, float]:
        return self.grid.span

    @property
    def is_zero(self) -> bool:
        return self.support.size == 0

    def label(self) -> str:
        return self.support.label()

    def _sub(self) -> SystemSpec:
        return subcommunity(self.spec, self.support)

    def extend(self, t_hi: float) -> None:
        """Make the forward extension cover ``t_hi``."""
        lo, hi = self.window
        if t_hi <= hi or self.is_zero:
            return
        if self._ext and self._ext[-1].span[1] >= t_hi:
            return
        start, u_start = (self._ext[-1].span[1], self._ext[-1].final) if self._ext else (hi, self.grid.final)
        target = max(t_hi, start + 50.0)
        idx = list(self.support.present)
        piece = integrate(self._sub(), start, u_start[idx], target, RTOL, ATOL)
        emb = TrajectoryGrid(
            piece.times,
            embed(piece.states, self._sub()),
            self.support,
            piece.dense,
            (lambda v, p=piece: embed(p.unpack(v), self._sub())),
        )
        self._ext.append(emb)

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.is_zero:
            return np.zeros(t_arr.shape + (self.n,))
        lo, hi = self.window
        if np.any(t_arr < lo - 1e-12):
            raise ValueError(f"complete solution {self.label()} is stored on [{lo}, {hi}]; backward extension is not available")
        flat = np.atleast_1d(t_arr).ravel()
        out = np.empty((flat.size, self.n))
        inside = flat <= hi
        if np.any(inside):
            out[inside] = self._spline(flat[inside])
            out[inside][:, list(self.support.absent)] = 0.0
        if np.any(~inside):
            self.extend(float(flat.max()))
            for k in np.flatnonzero(~inside):
                tk = flat[k]
                piece = next(p for p in self._ext if p.span[0] <= tk <= p.span[1])
                out[k] = piece(tk)
        out[:, list(self.support.absent)] = 0.0
        return out.reshape(t_arr.shape + (self.n,))

    def to_json(self) -> dict:
        return {
            "support": self.support.label(),
            "window": list(self.window),
            "certified_bounds": {
                str(i + 1): [float(self.certified_bounds[i, 0]), float(self.certified_bounds[i, 1])] for i in self.support.present
            },
            "pullback_horizon": self.pullback_horizon,
            "convergence_residual": self.convergence_residual,
            "tolerance": self.tol,
            "residual_history": [{"T": T, "gap": g, "step": s} for T, g, s in self.residual_history],
            "grid_points": int(len(self.grid.times)),
            "grid_spacing": float(self.grid.times[1] - self.grid.times[0]) if len(self.grid.times) > 1 else 0.0,
        }


def _storage_times(window, spacing=SPACING) -> np.ndarray:
    lo, hi = window
    m = int(round((hi - lo) / spacing))
    return np.linspace(lo, hi, m + 1)


def zero_solution(spec: SystemSpec, window=(-40.0, 50.0), spacing=SPACING) -> CompleteSolution:
    ts = _storage_times(window, spacing)
    grid = TrajectoryGrid(ts, np.zeros((ts.size, spec.n)), SupportSet((), spec.n))
    return CompleteSolution(SupportSet((), spec.n), grid, np.zeros((spec.n, 2)), 0.0, 0.0, spec)


def _witness_for(spec: SystemSpec, support: SupportSet, witness: Optional[Witness]) -> Witness:
    if witness is not None and witness.d is not None and witness.dbar is not None:
        if witness.support != support:
            witness = Witness(support, d=witness.d, dbar=np.where(np.isin(np.arange(spec.n), support.present), witness.dbar, np.nan))
        rep = check_A(spec, witness.d, witness.dbar, support)
        if not rep.passed:
            raise ValueError(f"supplied witness does not certify A on {support.label()} (margin {rep.margin:.3g})")
        if rep.verdict != "pass-conservative":
            warnings.warn(f"A on {support.label()} certified only on samples", stacklevel=3)
        return witness
    res = search_witness(spec, "A", support)
    if res.witness is None:
        raise ValueError(f"no witness for A on {support.label()}: {res.detail}")
    if res.report is not None and res.report.verdict != "pass-conservative":
        warnings.warn(f"A on {support.label()} certified only on samples", stacklevel=3)
    return res.witness


def _pullback_pair(sub, lo, hi, T, d, dbar, ts):
    up = integrate(sub, lo - T, d, hi, RTOL, ATOL)
    dn = integrate(sub, lo - T, dbar, hi, RTOL, ATOL)
    return up(ts), dn(ts)


def compute_star(
    spec: SystemSpec,
    support: SupportSet | None = None,
    window=(-40.0, 50.0),
    tol: float = 1e-8,
    witness: Optional[Witness] = None,
    *,
    T0: float = T0,
    T_max: float = T_MAX,
    spacing: float = SPACING,
    check_h2: bool = True,
) -> CompleteSolution:
    """Complete trajectory with support ``support`` by pullback from the witness data.

    For horizons ``T0, 2 T0, ...`` the restricted system is integrated from
    ``window[0] - T`` starting at ``d`` and at ``dbar``; iteration stops when
    the two runs agree within ``tol`` on the window and the midpoint moved by
    at most ``tol`` since the previous horizon.
    """
    support = support or SupportSet.full(spec.n)
    if support.size == 0:
        return zero_solution(spec, window, spacing)
    w = _witness_for(spec, support, witness)
    idx = list(support.present)
    sub = subcommunity(spec, support)
    if check_h2 and search_witness(sub, "H2").witness is None:
        warnings.warn(f"column dominance not certified on {support.label()}", stacklevel=2)
    d, dbar = w.d[idx], w.dbar[idx]
    lo, hi = map(float, window)
    ts = _storage_times((lo, hi), spacing)
    history, prev = [], None
    T = float(T0)
    while True:
        U, L = _pullback_pair(sub, lo, hi, T, d, dbar, ts)
        gap = float(np.max(np.abs(U - L)))
        mid = 0.5 * (U + L)
        step = float(np.max(np.abs(mid - prev))) if prev is not None else math.inf
        history.append((T, gap, step))
        if gap <= tol and step <= tol:
            break
        prev = mid
        T *= 2
        if T > T_max:
            raise NonConvergenceError(
                f"pullback did not converge on {support.label()} by horizon {T_max}: gap {gap:.3g}, step {step:.3g}", history
            )
    below = mid < dbar - tol
    above = mid > d + tol
    if np.any(below) or np.any(above):
        k = np.argwhere(below | above)[0]
        raise CertificateInconsistency(
            f"u*_{idx[k[1]] + 1}({ts[k[0]]:.6g}) = {mid[k[0], k[1]]:.10g} outside [{dbar[k[1]]:.6g}, {d[k[1]]:.6g}]"
        )
    states = embed(mid, sub)
    deriv = np.array([sub.vector_field(t, u) for t, u in zip(ts, mid)])
    spline = CubicHermiteSpline(ts, states, embed(deriv, sub), axis=0)
    bounds = np.zeros((spec.n, 2))
    bounds[idx, 0], bounds[idx, 1] = dbar, d
    grid = TrajectoryGrid(ts, states, support)
    return CompleteSolution(support, grid, bounds, T, max(gap, step), spec, tol, history, w, spline)


def pullback_stability(sol: CompleteSolution, window=None) -> float:
    """Sup-distance on ``window`` between ``sol`` and a pullback from twice its horizon."""
    if sol.is_zero:
        return 0.0
    lo, hi = window or sol.window
    idx = list(sol.support.present)
    sub = subcommunity(sol.spec, sol.support)
    ts = np.linspace(lo, hi, int(round((hi - lo) / SPACING)) + 1)
    wlo = sol.window[0]
    U, L = _pullback_pair(sub, wlo, hi, 2 * sol.pullback_horizon, sol.witness.d[idx], sol.witness.dbar[idx], ts)
    return float(np.max(np.abs(0.5 * (U + L) - sol(ts)[:, idx])))


@dataclass
class ContractionEstimate:
    kappa: float
    sigma1: float
    sigma2: float
    fitted_decay: float
    fit_residual: float
    predicted_decay: Optional[float]
    fit_window: tuple
    degenerate: bool = False

    def to_json(self):
        return self.__dict__.copy()


def estimate_contraction(
    spec: SystemSpec, u0a, u0b, t0: float = 0.0, horizon: float = 8.0, delta: Optional[float] = None, *, floor: float = 1e-14
) -> ContractionEstimate:
    """Fit the exponential decay of ``|u(t) - v(t)|`` over the second half of the horizon.

    ``sigma1``/``sigma2`` are the smallest/largest component of either solution
    over the fit window; the predicted rate is ``delta * sigma1``.  Points
    where the distance is below ``floor`` (or the integration noise floor) are
    dropped.
    """
    u0a, u0b = np.asarray(u0a, float), np.asarray(u0b, float)
    if np.any(u0a <= 0) or np.any(u0b <= 0):
        raise ValueError("initial data must be strictly positive")
    rtol = 1e-13
    ts = np.linspace(t0, t0 + horizon, 801)
    ga = integrate(spec, t0, u0a, t0 + horizon, rtol, 1e-16)
    gb = integrate(spec, t0, u0b, t0 + horizon, rtol, 1e-16)
    ua, ub = ga(ts), gb(ts)
    dist = np.linalg.norm(ua - ub, axis=1)
    noise = max(floor, 1e3 * rtol * float(np.max(np.abs(ua))))
    if dist[0] <= floor:
        return ContractionEstimate(0.0, float(np.min(ua)), float(np.max(ua)), 0.0, 0.0, None, (t0, t0 + horizon), True)
    half = ts >= t0 + 0.5 * horizon
    ok = half & (dist > noise)
    if np.count_nonzero(ok) < 10:
        # distance underflows early: fit the pre-underflow segment
        ok = dist > noise
        ok[: max(1, np.argmax(~ok) if np.any(~ok) else ok.size) // 2] = False
    tt, ly = ts[ok], np.log(dist[ok])
    coef, res, *_ = np.polyfit(tt, ly, 1, full=True)
    resid = float(np.sqrt(res[0] / tt.size)) if res.size else 0.0
    both = np.concatenate([ua[ok], ub[ok]])
    sigma1, sigma2 = float(np.min(both)), float(np.max(both))
    rates = np.diff(np.log(np.maximum(dist, 1e-300))) / np.diff(ts)
    kappa = float(max(0.0, np.max(rates[dist[1:] > noise]))) if np.any(dist[1:] > noise) else 0.0
    return ContractionEstimate(
        kappa, sigma1, sigma2, float(-coef[0]), resid, None if delta is None else delta * sigma1, (float(tt[0]), float(tt[-1]))
    )


def forward_attraction(
    spec: SystemSpec, star: CompleteSolution, d, n_samples: int = 20, t0: float = 0.0, t1: float = 60.0, seed: int = 42
):
    """Largest distance at ``t1`` between ``star`` and solutions started from
    uniform random data in ``(0, 2d]`` at ``t0``; returns ``(max_error, U0)``."""
    rng = np.random.default_rng(seed)
    d = np.asarray(d, float)
    U0 = 2 * d * (1.0 - rng.random((n_samples, spec.n)))  # (0, 2d]
    g = integrate_batch(spec, t0, U0, t1, 1e-10, 1e-13)
    err = np.linalg.norm(g.final - star(t1)[None, :], axis=1)
    return float(np.max(err)), U0


def list_complete_solutions(
    spec: SystemSpec, witnesses: Optional[dict] = None, window=(-40.0, 50.0), tol: float = 1e-8, supports=None
):
    """Every certifiable complete solution, smallest support first.

    Returns ``(solutions, failures)`` where ``failures`` maps support labels to
    the reason the support was not certified.  The zero solution is always
    included.
    """
    witnesses = witnesses or {}
    supports = list(supports) if supports is not None else all_supports(spec.n)

    def one(sup: SupportSet):
        if sup.size == 0:
            return sup, zero_solution(spec, window), None
        try:
            return sup, compute_star(spec, sup, window, tol, witnesses.get(sup)), None
        except (ValueError, NonConvergenceError, CertificateInconsistency) as exc:
            return sup, None, str(exc)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if thread_count() > 1:
            with ThreadPoolExecutor(thread_count()) as pool:
                results = list(pool.map(one, supports))
        else:
            results = [one(s) for s in supports]
    sols, failures = [], {}
    for sup, sol, err in results:
        if sol is not None:
            sols.append(sol)
        else:
            failures[sup.label()] = err
    if not any(s.is_zero for s in sols):
        sols.insert(0, zero_solution(spec, window))
    return sols, failures
