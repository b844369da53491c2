"""Certification of the coefficient conditions and search for constant witnesses.

Every check has two tiers.  The *conservative* tier combines global
inf/sup estimates of the coefficients (a sum of infima bounds the infimum of
the sum), the *sampled* tier evaluates each inequality on the check grid.
A check passes when its smallest slack is non-negative up to a relative
tolerance of 1e-9; the inequalities are non-strict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .model import SupportSet, SystemSpec, subcommunity

__all__ = [
    "Witness",
    "ConditionReport",
    "SearchResult",
    "check_H1",
    "check_H2",
    "check_A",
    "check_B",
    "search_witness",
    "find_witness",
    "SLACK_TOL",
    "search_grid",
]

SLACK_TOL = 1e-9
GRID_POINTS = 21
GRID_RANGE = (0.05, 20.0)

PASS_CONSERVATIVE = "pass-conservative"
PASS_SAMPLED = "pass-sampled"
FAIL = "fail"


def search_grid(points: int = GRID_POINTS, lo: float = GRID_RANGE[0], hi: float = GRID_RANGE[1]) -> np.ndarray:
    return np.geomspace(lo, hi, points)


@dataclass
class Witness:
    """Constants certifying a condition on a support ``(I, J)``.

    ``d`` and ``c``/``cbar`` are full-length; ``dbar`` is full-length with NaN
    on ``J``.  ``delta`` is the column-dominance constant, ``delta_row`` the
    row-dominance one.
    """

    support: SupportSet
    c: Optional[np.ndarray] = None
    cbar: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    dbar: Optional[np.ndarray] = None
    eps: Optional[float] = None
    theta: Optional[float] = None
    delta: Optional[float] = None
    delta_row: Optional[float] = None

    def __post_init__(self):
        n = self.support.n
        for name in ("c", "cbar", "d"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).reshape(-1)
                if v.size != n:
                    raise ValueError(f"{name} must have length {n}")
                setattr(self, name, v)
        if self.dbar is not None:
            self.dbar = _full_dbar(self.dbar, self.support)

    def dbar_on(self) -> np.ndarray:
        return self.dbar[list(self.support.present)]

    def to_json(self) -> dict:
        out = {"support": self.support.label()}
        for name in ("c", "cbar", "d", "dbar", "eps", "theta", "delta", "delta_row"):
            v = getattr(self, name)
            if v is None:
                continue
            if name == "dbar":
                out[name] = {str(i + 1): float(v[i]) for i in self.support.present}
            else:
                out[name] = v.tolist() if isinstance(v, np.ndarray) else float(v)
        return out

    @classmethod
    def from_json(cls, doc: dict, n: int) -> "Witness":
        """Parse the ``witness`` object of a spec file (species 1-based)."""
        sup = doc.get("support")
        if sup is None:
            support = SupportSet.full(n)
        elif isinstance(sup, str):
            inner = sup.strip().strip("{}").strip()
            support = SupportSet(tuple(int(x) - 1 for x in inner.split(",") if x.strip()), n)
        else:
            support = SupportSet(tuple(int(x) - 1 for x in sup), n)
        dbar = doc.get("dbar")
        if isinstance(dbar, dict):
            arr = np.full(n, np.nan)
            for k, v in dbar.items():
                arr[int(k) - 1] = float(v)
            dbar = arr
        kw = {k: doc[k] for k in ("c", "cbar", "d", "eps", "theta", "delta", "delta_row") if k in doc}
        return cls(support=support, dbar=dbar, **kw)


def _full_dbar(dbar, support: SupportSet) -> np.ndarray:
    dbar = np.asarray(dbar, dtype=float).reshape(-1)
    n = support.n
    if dbar.size == n:
        out = dbar.copy()
    elif dbar.size == support.size:
        out = np.full(n, np.nan)
        out[list(support.present)] = dbar
    else:
        raise ValueError(f"dbar must have length {support.size} (on I) or {n}")
    out[list(support.absent)] = np.nan
    if np.any(np.isnan(out[list(support.present)])):
        raise ValueError("dbar missing entries on I")
    return out


@dataclass
class ConditionReport:
    """Outcome of one condition check.

    ``margin`` is the smallest sampled slack, ``conservative_margin`` the
    smallest slack computed from the global bounds, ``rows`` the per-index
    trace (branch applied, slack, worst time).
    """

    condition: str
    verdict: str
    margin: float
    conservative_margin: float
    worst_t: float
    worst_index: int
    rows: list = field(default_factory=list)
    witness: dict = field(default_factory=dict)
    bound_source: str = "sampled"
    window: tuple = ()
    tol: float = 0.0

    @property
    def passed(self) -> bool:
        return self.verdict != FAIL

    def to_json(self) -> dict:
        return {
            "condition": self.condition,
            "verdict": self.verdict,
            "margin": self.margin,
            "conservative_margin": self.conservative_margin,
            "worst_t": self.worst_t,
            "worst_index": self.worst_index + 1 if self.worst_index >= 0 else None,
            "rows": self.rows,
            "witness": self.witness,
            "bound_source": self.bound_source,
            "window": list(self.window),
            "tolerance": self.tol,
        }


def _positive(name, x):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return x


def _bound_source(spec: SystemSpec) -> str:
    srcs = set(spec.bounds["source"].values())
    return "declared" if srcs == {"declared"} else ("sampled" if srcs == {"sampled"} else "mixed")


def _report(condition, spec, lines, scale, witness_json) -> ConditionReport:
    """Assemble a report from inequality lines.

    Each line is ``(index, branch, conservative_slack, sampled_slack_array)``.
    """
    tol = SLACK_TOL * (scale if scale > 0 else 1.0)
    ts = spec.grid
    rows = []
    margin, cons, worst_t, worst_i = math.inf, math.inf, float("nan"), -1
    for idx, branch, cslack, sslack in lines:
        k = int(np.argmin(sslack))
        smin = float(sslack[k])
        rows.append(
            {
                "index": idx + 1,
                "branch": branch,
                "slack": smin,
                "conservative_slack": float(cslack),
                "worst_t": float(ts[k]),
            }
        )
        if smin < margin:
            margin, worst_t, worst_i = smin, float(ts[k]), idx
        cons = min(cons, float(cslack))
    if not lines:
        margin = cons = 0.0
    if cons >= -tol:
        verdict = PASS_CONSERVATIVE
    elif margin >= -tol:
        verdict = PASS_SAMPLED
    else:
        verdict = FAIL
    return ConditionReport(
        condition, verdict, margin, cons, worst_t, worst_i, rows, witness_json, _bound_source(spec), tuple(spec.window), tol
    )


def _dominance(spec: SystemSpec, w, delta, transpose: bool, name: str) -> ConditionReport:
    w = _positive("weights", w)
    delta = float(_positive("delta", delta))
    n = spec.n
    if w.size != n:
        raise ValueError(f"weights must have length {n}")
    b_lo = spec.bounds["b"][0]
    _, bs = spec.sampled
    if transpose:
        b_lo = b_lo.T
        bs = np.transpose(bs, (0, 2, 1))
    # rows of (B w): the diagonal uses inf b_ii, off-diagonals inf b_ij (<= 0)
    cons = b_lo @ w - delta
    sampled = bs @ w - delta  # (T, n)
    lines = [(i, "row" if not transpose else "column", cons[i], sampled[:, i]) for i in range(n)]
    scale = max(delta, float(np.max(np.abs(w))) * max(1.0, float(np.max(np.abs(b_lo)))))
    key = "cbar" if transpose else "c"
    return _report(name, spec, lines, scale, {key: w.tolist(), "delta": delta})


def check_H1(spec: SystemSpec, c, delta) -> ConditionReport:
    """Row dominance: ``c_i b_ii(t) + sum_{j != i} c_j b_ij(t) >= delta`` for all i."""
    return _dominance(spec, c, delta, False, "H1")


def check_H2(spec: SystemSpec, cbar, delta) -> ConditionReport:
    """Column dominance: ``cbar_i b_ii(t) + sum_{j != i} cbar_j b_ji(t) >= delta``."""
    return _dominance(spec, cbar, delta, True, "H2")


def check_A(spec: SystemSpec, d, dbar, support: SupportSet | None = None) -> ConditionReport:
    """Persistence condition on ``I``:
    ``dbar_i b_ii <= a_i <= d_i b_ii + sum_{j in I, j != i} d_j b_ij`` for i in I.

    ``d`` may have length n or |I|; ``dbar`` likewise.
    """
    support = support or SupportSet.full(spec.n)
    I = list(support.present)
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.size == support.size and d.size != spec.n:
        full = np.full(spec.n, np.nan)
        full[I] = d
        d = full
    _positive("d", d[I])
    dbar = _full_dbar(dbar, support)
    _positive("dbar", dbar[I])
    (a_lo, a_hi), (b_lo, b_hi) = spec.bounds["a"], spec.bounds["b"]
    a_s, b_s = spec.sampled
    lines = []
    for i in I:
        low_c = a_lo[i] - dbar[i] * b_hi[i, i]
        low_s = a_s[:, i] - dbar[i] * b_s[:, i, i]
        others = [j for j in I if j != i]
        up_c = d[i] * b_lo[i, i] + sum(d[j] * b_lo[i, j] for j in others) - a_hi[i]
        up_s = d[i] * b_s[:, i, i] + (b_s[:, i, others] @ d[others] if others else 0.0) - a_s[:, i]
        lines.append((i, "lower", low_c, low_s))
        lines.append((i, "upper", up_c, up_s))
    scale = float(np.nanmax(np.abs(np.concatenate([d[I], [1.0]])))) * max(1.0, float(np.max(np.abs(b_lo)))) if I else 1.0
    name = "A" if support.size == spec.n else f"A_I{support.label()}"
    wj = {"support": support.label(), "d": {str(i + 1): float(d[i]) for i in I}, "dbar": {str(i + 1): float(dbar[i]) for i in I}}
    return _report(name, spec, lines, scale, wj)


def check_B(spec: SystemSpec, w: Witness) -> ConditionReport:
    """Extinction condition with split ``(I, J)``:

    i in I: ``b_ii dbar_i + eps <= a_i <= b_ii d_i + sum_{j != i} b_ij (d_j + theta c_j) - eps``
    i in J: ``a_i <= sum_{j != i} b_ij (d_j + theta c_j) - eps``.
    """
    support = w.support
    n = spec.n
    if w.c is None or w.d is None or w.eps is None or w.theta is None:
        raise ValueError("witness must provide c, d, eps and theta")
    if support.size and w.dbar is None:
        raise ValueError("witness missing dbar entries on I")
    c = _positive("c", w.c)
    d = _positive("d", w.d)
    eps = float(_positive("eps", w.eps))
    theta = float(_positive("theta", w.theta))
    if support.size:
        _positive("dbar", w.dbar_on())
    e = d + theta * c
    (a_lo, a_hi), (b_lo, b_hi) = spec.bounds["a"], spec.bounds["b"]
    a_s, b_s = spec.sampled
    lines = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        coup_c = float(b_lo[i, others] @ e[others]) if others else 0.0
        coup_s = b_s[:, i, others] @ e[others] if others else np.zeros(len(spec.grid))
        if i in support:
            lines.append((i, "I-lower", a_lo[i] - b_hi[i, i] * w.dbar[i] - eps, a_s[:, i] - b_s[:, i, i] * w.dbar[i] - eps))
            lines.append((i, "I-upper", b_lo[i, i] * d[i] + coup_c - eps - a_hi[i], b_s[:, i, i] * d[i] + coup_s - eps - a_s[:, i]))
        else:
            lines.append((i, "J", coup_c - eps - a_hi[i], coup_s - eps - a_s[:, i]))
    scale = float(np.max(e)) * max(1.0, float(np.max(np.abs(b_lo))))
    return _report(f"B{support.label()}", spec, lines, scale, w.to_json())


# -- witness search ---------------------------------------------------------------


@dataclass
class SearchResult:
    """Outcome of a witness search: ``status`` is ``found``, ``not found`` or
    ``infeasible`` (the last only for the dominance LP on conservative bounds,
    which is a proof relative to those bounds)."""

    kind: str
    status: str
    witness: Optional[Witness] = None
    report: Optional[ConditionReport] = None
    detail: str = ""

    def to_json(self):
        return {
            "kind": self.kind,
            "status": self.status,
            "witness": self.witness.to_json() if self.witness is not None else None,
            "report": self.report,
            "detail": self.detail,
        }


def _max_dominance_lp(rows: np.ndarray):
    """maximize delta s.t. rows @ c >= delta, sum c = 1, c >= 0.  rows is (m, n)."""
    m, n = rows.shape
    obj = np.zeros(n + 1)
    obj[-1] = -1.0
    A_ub = np.hstack([-rows, np.ones((m, 1))])
    A_eq = np.hstack([np.ones((1, n)), np.zeros((1, 1))])
    res = linprog(obj, A_ub=A_ub, b_ub=np.zeros(m), A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * n + [(None, None)], method="highs")
    if not res.success:
        return None, -math.inf
    return res.x[:n], float(res.x[-1])


def _interior(c: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Move an LP optimum towards the uniform vector so every weight is positive
    while the worst row value stays positive."""
    n = c.size
    u = np.full(n, 1.0 / n)
    best = float(np.min(rows @ c))
    if np.all(c > 1e-9 * c.max()):
        return c
    for s in (0.5, 0.1, 0.01, 1e-3, 1e-4, 1e-6):
        cand = (1 - s) * c + s * u
        if np.min(rows @ cand) >= 0.5 * best:
            return cand
    return (1 - 1e-6) * c + 1e-6 * u


def _search_dominance(spec: SystemSpec, transpose: bool) -> SearchResult:
    kind = "H2" if transpose else "H1"
    n = spec.n
    b_lo = spec.bounds["b"][0]
    rows = b_lo.T if transpose else b_lo
    c, dstar = _max_dominance_lp(rows)
    check = check_H2 if transpose else check_H1
    detail = ""
    if c is not None and dstar > 0:
        c = _interior(c, rows)
        delta = float(np.min(rows @ c))
        rep = check(spec, c, delta)
        if rep.passed:
            return SearchResult(kind, "found", _dom_witness(spec, c, delta, transpose), rep)
    proven = c is not None and dstar <= 0
    if proven:
        detail = f"conservative LP optimum {dstar:.6g} <= 0: infeasible relative to the coefficient bounds ({_bound_source(spec)})"
    # sampled tier: constraints at (thinned) grid times, then full-grid verification
    _, bs = spec.sampled
    if transpose:
        bs = np.transpose(bs, (0, 2, 1))
    stride = max(1, len(spec.grid) // 2000)
    for sl in (slice(None, None, stride), slice(None)):
        c2, d2 = _max_dominance_lp(bs[sl].reshape(-1, n))
        if c2 is None or d2 <= 0:
            break
        c2 = _interior(c2, bs[sl].reshape(-1, n))
        delta = float(np.min(bs @ c2))
        if delta > 0:
            rep = check(spec, c2, delta)
            if rep.passed:
                return SearchResult(kind, "found", _dom_witness(spec, c2, delta, transpose), rep)
    return SearchResult(kind, "infeasible" if proven else "not found", None, None, detail or "no positive weight vector found")


def _dom_witness(spec, c, delta, transpose):
    # normalise to max weight 1; the decay rate of the weighted log-distance is delta / max(c)
    scale = float(np.max(c))
    c, delta = c / scale, delta / scale
    sup = SupportSet.full(spec.n)
    if transpose:
        return Witness(sup, cbar=c, delta=delta)
    return Witness(sup, c=c, delta_row=delta)


def _lower_data(spec: SystemSpec, I: list[int]) -> Optional[np.ndarray]:
    """dbar_i = half the smallest ratio a_i / b_ii (conservative if possible)."""
    (a_lo, _), (_, b_hi) = spec.bounds["a"], spec.bounds["b"]
    a_s, b_s = spec.sampled
    out = np.full(spec.n, np.nan)
    for i in I:
        cons = a_lo[i] / b_hi[i, i]
        samp = float(np.min(a_s[:, i] / b_s[:, i, i]))
        r = cons if cons > 0 else samp
        if not r > 0:
            return None
        out[i] = 0.5 * r
    return out


def _row_weights(spec: SystemSpec, I: list[int]) -> np.ndarray:
    """Direction for the upper data: the row-dominance weights on ``I`` (max 1)."""
    c = np.ones(spec.n)
    if I:
        res = _search_dominance(subcommunity(spec, I), False)
        if res.witness is not None:
            c[I] = res.witness.c / np.max(res.witness.c)
    return c


def _search_A(spec: SystemSpec, support: SupportSet, grid: np.ndarray) -> SearchResult:
    kind = "A" if support.size == spec.n else "A_I"
    I = list(support.present)
    if not I:
        return SearchResult(kind, "found", Witness(support, d=np.ones(spec.n), dbar=np.full(spec.n, np.nan)))
    dbar = _lower_data(spec, I)
    if dbar is None:
        return SearchResult(kind, "not found", detail="some a_i is not positive on the window")
    w = _row_weights(spec, I)
    for s in grid:
        d = np.ones(spec.n)
        d[I] = s * w[I]
        rep = check_A(spec, d, dbar, support)
        if rep.passed:
            return SearchResult(kind, "found", Witness(support, d=d, dbar=dbar), rep)
    return SearchResult(kind, "not found", detail="no grid point satisfies the upper inequality")


def _search_B(spec: SystemSpec, support: SupportSet, grid: np.ndarray, c: Optional[np.ndarray]) -> SearchResult:
    n = spec.n
    I, J = list(support.present), list(support.absent)
    if c is None:
        h1 = _search_dominance(spec, False)
        if h1.witness is None:
            return SearchResult("B", "not found", detail="no row-dominance weights")
        c = h1.witness.c / np.max(h1.witness.c)
    dbar = _lower_data(spec, I) if I else None
    if I and dbar is None:
        return SearchResult("B", "not found", detail="some a_i (i in I) is not positive on the window")
    a_s, b_s = spec.sampled
    stride = max(1, len(spec.grid) // 4000)
    a_t, b_t = a_s[::stride], b_s[::stride]
    offdiag = ~np.eye(n, dtype=bool)
    w_dir = _row_weights(spec, I) if I else np.ones(n)

    def slacks(a, b, d, theta):
        e = d + theta * c
        coup = (b * offdiag[None]) @ e  # (T, n)
        diag = np.diagonal(b, axis1=1, axis2=2)
        parts = []
        if I:
            parts.append(a[:, I] - diag[:, I] * dbar[I])
            parts.append(diag[:, I] * d[I] + coup[:, I] - a[:, I])
        if J:
            parts.append(coup[:, J] - a[:, J])
        return min(float(np.min(p)) for p in parts)

    for theta in grid:
        for s in grid if I else grid[:1]:
            for r in grid:
                d = np.empty(n)
                d[I] = s * w_dir[I]
                d[J] = r * c[J]
                if slacks(a_t, b_t, d, theta) <= 0:
                    continue
                m = slacks(a_s, b_s, d, theta)
                if m <= 0:
                    continue
                w = Witness(support, c=c, d=d, dbar=dbar if I else None, eps=0.5 * m, theta=float(theta))
                rep = check_B(spec, w)
                if rep.passed:
                    return SearchResult("B", "found", w, rep)
                # r only makes the J-inequalities and the I-upper ones harder
                break
    return SearchResult("B", "not found", detail="no grid point (theta, s, r) gives positive slack")


def search_witness(spec: SystemSpec, kind: str, support: SupportSet | None = None, *, grid=None, c=None) -> SearchResult:
    """Search constant witnesses from coefficient bounds and samples.

    ``kind`` is one of ``H1``, ``H2``, ``A`` (``A_I`` on ``support``) or
    ``B`` (split ``I = support``).  Grid points are scanned in lexicographic
    order of ``(theta, s, r)``: ``d = s * w`` on ``I`` and ``r * c`` on ``J``.
    """
    grid = search_grid() if grid is None else np.asarray(grid, dtype=float)
    kind = kind.upper()
    if kind == "H1":
        return _search_dominance(spec, False)
    if kind == "H2":
        return _search_dominance(spec, True)
    support = support or SupportSet.full(spec.n)
    if kind in ("A", "A_I"):
        return _search_A(spec, support, grid)
    if kind == "B":
        return _search_B(spec, support, grid, c)
    raise ValueError(f"unknown condition kind {kind!r}")


def find_witness(spec: SystemSpec, kind: str, support: SupportSet | None = None, **kw) -> Optional[Witness]:
    """:func:`search_witness` returning only the witness (or ``None``)."""
    return search_witness(spec, kind, support, **kw).witness


def merge(*ws: Witness) -> Witness:
    """Combine partial witnesses over the same support (later ones win)."""
    out = ws[0]
    for w in ws[1:]:
        upd = {k: getattr(w, k) for k in ("c", "cbar", "d", "dbar", "eps", "theta", "delta", "delta_row") if getattr(w, k) is not None}
        out = replace(out, **upd)
    return out
