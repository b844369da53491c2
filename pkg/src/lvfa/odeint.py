"""Adaptive Dormand-Prince 5(4) integration of LV systems and linear matrix ODEs.

Positive species are integrated in logarithmic coordinates ``v = log u``, so
positivity is structural; species that start at exactly zero are removed from
the state and re-inserted as bit-exact zeros on output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .model import SupportSet, SystemSpec

__all__ = [
    "StiffnessError",
    "DenseOutput",
    "TrajectoryGrid",
    "dopri",
    "integrate",
    "integrate_batch",
    "integrate_matrix",
    "write_csv",
    "BLOWUP",
]

BLOWUP = 1e12
LOG_BLOWUP = math.log(BLOWUP)

# Dormand-Prince 5(4) tableau with Shampine's continuous extension.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 10.0
BETA = 0.04  # PI controller memory exponent
ALPHA = 0.2 - 0.75 * BETA


class StiffnessError(RuntimeError):
    pass


@dataclass
class DenseOutput:
    """Piecewise quartic interpolant over accepted steps (internal coordinates)."""

    t_start: np.ndarray  # (steps,)
    h: np.ndarray  # (steps,), signed
    y_start: np.ndarray  # (steps, dim)
    q: np.ndarray  # (steps, dim, 4)

    def __post_init__(self):
        t_end = self.t_start + self.h
        lo = np.minimum(self.t_start, t_end)
        order = np.argsort(lo, kind="stable")
        self._order = order
        self._lo = lo[order]
        self._span = (float(np.min(lo)), float(np.max(np.maximum(self.t_start, t_end))))

    @property
    def span(self) -> tuple[float, float]:
        return self._span

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        k = np.searchsorted(self._lo, t, side="right") - 1
        k = np.clip(k, 0, len(self._lo) - 1)
        seg = self._order[k]
        x = (t - self.t_start[seg]) / self.h[seg]
        powers = np.stack([x, x * x, x**3, x**4], axis=-1)  # (m, 4)
        y = self.y_start[seg] + self.h[seg][:, None] * np.einsum("mdk,mk->md", self.q[seg], powers)
        return y[0] if scalar else y


@dataclass
class Solution:
    t: np.ndarray
    y: np.ndarray
    dense: Optional[DenseOutput]
    status: str  # "ok" | "event"
    t_event: Optional[float] = None
    nfev: int = 0


def _initial_step(fun, t0, y0, f0, direction, rtol, atol, norm):
    d0 = norm(y0, np.zeros_like(y0), y0)
    d1 = norm(f0, np.zeros_like(y0), y0)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = fun(t0 + direction * h0, y1)
    d2 = norm(f1 - f0, np.zeros_like(y0), y0) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def _default_norm(rtol, atol):
    def norm(err, y_old, y_new):
        scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
        return float(np.sqrt(np.mean((err / scale) ** 2))) if err.size else 0.0

    return norm


def dopri(
    fun: Callable,
    t0: float,
    y0,
    t1: float,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    *,
    norm: Optional[Callable] = None,
    h_fixed: Optional[float] = None,
    event: Optional[Callable] = None,
    dense: bool = True,
    max_steps: int = 2_000_000,
    h_min_rel: float = 1e-14,
    h0: Optional[float] = None,
) -> Solution:
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1`` (either direction).

    ``norm(err, y_old, y_new)`` is the scaled error norm (<= 1 accepts).
    ``event(t, y)`` is a scalar function; integration stops at its first
    sign change from negative to non-negative, located on the dense output.
    ``h_fixed`` disables adaptivity (used for order verification); ``h0``
    overrides the initial step guess.  ``Solution.h_next`` is the step the
    controller would try next, for chaining short integrations.
    """
    y0 = np.array(y0, dtype=float)
    direction = 1.0 if t1 >= t0 else -1.0
    norm = norm or _default_norm(rtol, atol)
    ts, ys = [t0], [y0.copy()]
    d_t, d_h, d_y, d_q = [], [], [], []
    nfev = 0
    if t1 == t0 or y0.size == 0:
        if y0.size == 0:
            ts = [t0, t1] if t1 != t0 else [t0]
            ys = [y0.copy() for _ in ts]
        return Solution(np.array(ts), np.array(ys).reshape(len(ts), y0.size), None, "ok", nfev=nfev)

    t, y = float(t0), y0
    f = fun(t, y)
    nfev += 1
    if h_fixed is not None:
        h_abs = float(h_fixed)
    elif h0 is not None:
        h_abs = float(h0)
    else:
        h_abs = _initial_step(fun, t, y, f, direction, rtol, atol, norm)
        nfev += 1
    h_nat = h_abs
    err_old = 1e-4
    K = np.empty((7, y.size))
    g_old = event(t, y) if event is not None else None
    steps = 0
    while direction * (t1 - t) > 0:
        steps += 1
        if steps > max_steps:
            raise StiffnessError(f"step budget exhausted at t={t}")
        if h_fixed is not None:
            h_abs = min(float(h_fixed), abs(t1 - t))
        h_min = h_min_rel * max(1.0, abs(t))
        if h_abs < h_min:
            raise StiffnessError(f"step size underflow at t={t} (h={h_abs:.3g})")
        h_nat = h_abs
        last = h_abs >= abs(t1 - t)
        if last:
            h_abs = abs(t1 - t)
        h = direction * h_abs
        K[0] = f
        for s in range(1, 6):
            K[s] = fun(t + _C[s] * h, y + h * (_A[s] @ K[:s]))
        y_new = y + h * (_B @ K[:6])
        t_new = t1 if last else t + h
        f_new = fun(t_new, y_new)
        K[6] = f_new
        nfev += 6
        finite = np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))
        if h_fixed is None:
            err = norm(h * (_E @ K), y, y_new) if finite else np.inf
            if err > 1.0:
                fac = max(FAC_MIN, SAFETY * err ** (-ALPHA)) if np.isfinite(err) else FAC_MIN
                h_abs *= fac
                continue
        elif not finite:
            raise StiffnessError(f"non-finite state at t={t_new}")
        q = K.T @ _P
        if dense or event is not None:
            d_t.append(t)
            d_h.append(h)
            d_y.append(y.copy())
            d_q.append(q.copy())
        if event is not None:
            g_new = event(t_new, y_new)
            if g_old < 0 <= g_new:
                yk, tk, hk = y.copy(), t, h

                def g_at(x):
                    xi = (x - tk) / hk
                    return event(x, yk + hk * (q @ np.array([xi, xi * xi, xi**3, xi**4])))

                t_ev = brentq(g_at, min(tk, t_new), max(tk, t_new), xtol=1e-13, rtol=1e-13) if t_new != tk else t_new
                xi = (t_ev - tk) / hk
                y_ev = yk + hk * (q @ np.array([xi, xi * xi, xi**3, xi**4]))
                ts.append(t_ev)
                ys.append(y_ev)
                d_h[-1] = t_ev - tk
                d_q[-1] = q * 1.0
                # rescale the last segment so its local coordinate still spans [0, 1]
                d_q[-1] = _rescale_segment(q, hk, t_ev - tk)
                dn = DenseOutput(np.array(d_t), np.array(d_h), np.array(d_y), np.array(d_q)) if dense else None
                return Solution(np.array(ts), np.array(ys), dn, "event", t_ev, nfev)
            g_old = g_new
        if h_fixed is None:
            fac = SAFETY * err ** (-ALPHA) * err_old**BETA if err > 0 else FAC_MAX
            fac = min(FAC_MAX, max(FAC_MIN, fac))
            err_old = max(err, 1e-4)
            h_abs *= fac
        t, y, f = t_new, y_new, f_new
        ts.append(t)
        ys.append(y.copy())
    dn = DenseOutput(np.array(d_t), np.array(d_h), np.array(d_y), np.array(d_q)) if dense and d_t else None
    sol = Solution(np.array(ts), np.array(ys), dn, "ok", None, nfev)
    sol.h_next = max(h_nat, h_abs)
    return sol


def _rescale_segment(q, h_old, h_new):
    """Coefficients of the same polynomial in the variable ``(t - t_k) / h_new``."""
    r = h_new / h_old
    scale = np.array([r, r**2, r**3, r**4]) / r
    return q * scale


# -- LV trajectories ------------------------------------------------------------


@dataclass
class TrajectoryGrid:
    """A computed trajectory in top-level coordinates.

    ``times`` is strictly increasing; ``states[k, i] == 0`` exactly for
    absent species.  ``dense`` (when present) interpolates internal
    coordinates; ``__call__`` maps them back.
    """

    times: np.ndarray
    states: np.ndarray
    support: SupportSet
    dense: Optional[DenseOutput] = None
    unpack: Optional[Callable] = None
    escape_time: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.states.shape[-1]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        lo, hi = self.span
        if np.any(t_arr < lo - 1e-9) or np.any(t_arr > hi + 1e-9):
            raise ValueError(f"t outside trajectory span [{lo}, {hi}]")
        if self.dense is not None and self.unpack is not None:
            return self.unpack(self.dense(t_arr))
        flat = self.states.reshape(len(self.times), -1)
        out = np.stack([np.interp(t_arr, self.times, flat[:, j]) for j in range(flat.shape[1])], axis=-1)
        return out.reshape(t_arr.shape + self.states.shape[1:])

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _lv_log_rhs(spec: SystemSpec, idx: np.ndarray):
    if idx.size == spec.n and not spec.autonomous:
        coefficients = spec.coefficients

        def rhs(t, v):
            a, b = coefficients(t)
            return a - b @ np.exp(v)

        return rhs
    if spec.autonomous:
        a, b = spec.coefficients(0.0)
        a_p = np.ascontiguousarray(a[idx])
        b_p = np.ascontiguousarray(b[np.ix_(idx, idx)])

        def rhs(t, v):
            return a_p - b_p @ np.exp(v)

    else:

        def rhs(t, v):
            a, b = spec.coefficients(t)
            return a[idx] - b[np.ix_(idx, idx)] @ np.exp(v)

    return rhs


def _original_norm(rtol, atol):
    """Error control in original coordinates for log-state ``v``."""

    def norm(err, v_old, v_new):
        if err.size == 0:
            return 0.0
        u = np.exp(np.maximum(v_old, v_new))
        ratio = u * err / (atol + rtol * u)
        return float(np.sqrt(np.mean(ratio**2)))

    return norm


def integrate(
    spec: SystemSpec,
    t0: float,
    u0,
    t1: float,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    *,
    escape: Optional[float] = None,
    h_fixed: Optional[float] = None,
    dense: bool = True,
) -> TrajectoryGrid:
    """Integrate the LV system from ``u0`` at ``t0`` to ``t1`` (``t1 < t0`` allowed).

    The run stops early (``escape_time`` set) when ``|u|`` exceeds ``escape``
    or any component exceeds the blow-up guard ``1e12``.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (spec.n,):
        raise ValueError(f"u0 must have shape ({spec.n},)")
    if np.any(u0 < 0) or not np.all(np.isfinite(u0)):
        raise ValueError("u0 must be finite and componentwise non-negative")
    support = SupportSet.of(u0)
    idx = np.array(support.present, dtype=int)
    n_top = spec.parent_n

    def unpack(v):
        v = np.asarray(v)
        out = np.zeros(v.shape[:-1] + (spec.n,))
        out[..., idx] = np.exp(v)
        return out

    event = None
    if idx.size:
        limit = LOG_BLOWUP
        log_escape = math.log(escape) if escape is not None else None

        def event(t, v):
            g = float(np.max(v)) - limit
            if log_escape is not None:
                m = float(np.max(v))
                s = m + 0.5 * math.log(float(np.sum(np.exp(2.0 * (v - m)))))
                g = max(g, s - log_escape)
            return g

    v0 = np.log(u0[idx])
    sol = dopri(
        _lv_log_rhs(spec, idx),
        t0,
        v0,
        t1,
        rtol,
        atol,
        norm=_original_norm(rtol, atol),
        h_fixed=h_fixed,
        event=event,
        dense=dense,
    )
    times, states = sol.t, unpack(sol.y)
    dn = sol.dense
    if times[0] > times[-1]:
        times, states = times[::-1].copy(), states[::-1].copy()
    grid = TrajectoryGrid(times, states, support, dn, unpack if dn is not None else None, sol.t_event)
    grid.meta["nfev"] = sol.nfev
    grid.meta["n_top"] = n_top
    return grid


def integrate_batch(spec: SystemSpec, t0: float, U0, t1: float, rtol: float = 1e-9, atol: float = 1e-12) -> TrajectoryGrid:
    """Integrate many strictly positive initial states with one shared step sequence.

    Returns a grid whose states have shape ``(steps, m, n)``.
    """
    U0 = np.asarray(U0, dtype=float)
    m, n = U0.shape
    if n != spec.n or np.any(U0 <= 0):
        raise ValueError("batch initial data must be strictly positive with n columns")
    if spec.autonomous:
        a, b = spec.coefficients(0.0)

        def rhs(t, v):
            return (a[None, :] - np.exp(v.reshape(m, n)) @ b.T).ravel()

    else:

        def rhs(t, v):
            a, b = spec.coefficients(t)
            return (a[None, :] - np.exp(v.reshape(m, n)) @ b.T).ravel()

    def unpack(v):
        v = np.asarray(v)
        return np.exp(v).reshape(v.shape[:-1] + (m, n))

    def event(t, v):
        return float(np.max(v)) - LOG_BLOWUP

    sol = dopri(rhs, t0, np.log(U0).ravel(), t1, rtol, atol, norm=_original_norm(rtol, atol), event=event)
    times, states = sol.t, unpack(sol.y)
    if times[0] > times[-1]:
        times, states = times[::-1].copy(), states[::-1].copy()
    return TrajectoryGrid(times, states, SupportSet.full(n), sol.dense, unpack, sol.t_event)


def integrate_matrix(matfn: Callable, t0: float, t1: float, rtol: float = 1e-10, atol: float = 1e-14, X0=None, dim=None):
    """Fundamental matrix ``M(t1, t0)`` of ``x' = D(t) x`` (or ``M(t1,t0) @ X0``).

    Backward runs (``t1 < t0``) integrate the same ODE in reversed time,
    which yields ``M(t0, t1)^{-1}``.
    """
    if X0 is None:
        n = dim if dim is not None else np.atleast_2d(matfn(t0)).shape[0]
        X0 = np.eye(n)
    X0 = np.asarray(X0, dtype=float)
    shape = X0.shape
    rows = shape[0]

    def rhs(t, x):
        return (np.atleast_2d(matfn(t)) @ x.reshape(rows, -1)).ravel()

    sol = dopri(rhs, t0, X0.ravel(), t1, rtol, atol, dense=False)
    return sol.y[-1].reshape(shape)


def write_csv(path, times, states, header_prefix="u"):
    """Trajectory CSV: header ``t,u1,...,un``; 17 significant digits."""
    states = np.asarray(states)
    n = states.shape[-1]
    lines = [",".join(["t"] + [f"{header_prefix}{i + 1}" for i in range(n)])]
    for t, row in zip(times, states):
        lines.append(",".join(format(float(x), ".17g") for x in (t, *row)))
    text = "\n".join(lines) + "\n"
    from .io import atomic_write

    atomic_write(path, text)
