"""Exponential dichotomies of the linearization around a complete solution.

The splitting is computed from its defining property: the stable subspace at
``t`` holds the solutions decaying forward, the unstable one the solutions
decaying backward.  Both are obtained by QR-reorthonormalised sweeps of step
matrices (forward sweep for the backward-decaying directions, backward sweep
for the forward-decaying ones).  The projection ``P(t)`` onto the stable
space along the unstable space is then assembled directly at each grid time,
which avoids conjugating by long-range fundamental matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import null_space, orth, subspace_angles

from .model import SupportSet, SystemSpec
from .odeint import dopri, integrate_matrix
from .trajectories import CompleteSolution

__all__ = [
    "SpectralGapError",
    "IllConditionedSplitting",
    "DivergenceError",
    "LinearizedSystem",
    "Sweep",
    "DichotomyCertificate",
    "linearize",
    "linear_system",
    "link_projection",
    "cross_check_linking",
    "sweep",
    "subspaces",
    "linking_operators",
    "build_certificate",
    "verify_bounds",
]

GAP = 0.05
STEP = 0.25
PAIR_DELTAS = (0.5, 1.0, 2.0, 5.0, 10.0)
MAT_RTOL = 1e-11
MAT_ATOL = 1e-14
SWEEP_RTOL = 1e-10
SWEEP_ATOL = 1e-12


class SpectralGapError(RuntimeError):
    pass


class IllConditionedSplitting(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, exponent):
        super().__init__(message)
        self.exponent = exponent


@dataclass(eq=False)
class LinearizedSystem:
    """``w' = D(t) w`` with ``D = [[A, C], [0, B]]`` in the ordering ``present + absent``.

    ``matfn`` may be given directly (a plain linear system) instead of a base
    solution; ``k`` is then the size of the ``A`` block.
    """

    matfn_perm: callable
    n: int
    k: int
    order: tuple
    base: Optional[CompleteSolution] = None
    span: tuple = (-math.inf, math.inf)

    def D(self, t) -> np.ndarray:
        return self.matfn_perm(t)

    def A(self, t):
        return self.D(t)[: self.k, : self.k]

    def B(self, t):
        return self.D(t)[self.k :, self.k :]

    def C(self, t):
        return self.D(t)[: self.k, self.k :]

    def to_original(self, M: np.ndarray) -> np.ndarray:
        """Map a matrix in the permuted ordering back to species order."""
        perm = np.asarray(self.order)
        out = np.empty_like(M)
        out[np.ix_(perm, perm)] = M
        return out


def linearize(spec: SystemSpec, base: CompleteSolution) -> LinearizedSystem:
    """Jacobian of the LV field along ``base``, present species first.

    Entries: ``a_ii = a_i - sum_j b_ij u_j - b_ii u_i``, ``a_ij = -b_ij u_i``
    on the present block, ``c_ii = a_i - sum_{j in I} b_ij u_j`` on the absent
    diagonal and ``-u_i b_ij`` in the coupling block.
    """
    order = tuple(base.support.present) + tuple(base.support.absent)
    perm = np.asarray(order)
    spline = base._spline

    def ustar(t):
        if spline is not None and base.window[0] <= t <= base.window[1]:
            return spline(t)
        return base(t)

    def matfn(t):
        return spec.jacobian(t, ustar(t))[np.ix_(perm, perm)]

    span = (base.window[0], math.inf)
    ls = LinearizedSystem(matfn, spec.n, base.support.size, order, base, span)
    ls.spec = spec
    return ls


def linear_system(matfn, k: int, n: Optional[int] = None) -> LinearizedSystem:
    """Wrap a matrix function already in block-triangular ordering."""
    n = n if n is not None else np.atleast_2d(matfn(0.0)).shape[0]
    return LinearizedSystem(lambda t: np.atleast_2d(np.asarray(matfn(t), dtype=float)), n, k, tuple(range(n)))


def _step_matrices(ls: LinearizedSystem, times: np.ndarray) -> np.ndarray:
    out = np.empty((len(times) - 1, ls.n, ls.n))
    if ls.base is not None and getattr(ls, "spec", None) is not None:
        return _coupled_steps(ls, times, out)
    for k in range(len(times) - 1):
        out[k] = integrate_matrix(ls.D, times[k], times[k + 1], MAT_RTOL, MAT_ATOL, dim=ls.n)
    return out


def _coupled_steps(ls: LinearizedSystem, times: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Step matrices with the base solution integrated alongside from each node.

    The stored base is only C^1 between its nodes; re-integrating it over each
    short step keeps the variational right-hand side smooth.
    """
    spec, base, n = ls.spec, ls.base, ls.n
    perm = np.asarray(ls.order)
    I = np.asarray(base.support.present, dtype=int)
    m = I.size
    nodes = base(times)

    def rhs(t, z):
        a, b = spec.coefficients(t)
        u = np.zeros(n)
        u[I] = np.exp(z[:m])
        bu = b @ u
        jac = -u[:, None] * b
        jac[np.diag_indices(n)] += a - bu
        jp = jac[perm][:, perm]
        X = z[m:].reshape(n, n)
        return np.concatenate([(a - bu)[I], (jp @ X).ravel()])

    eye = np.eye(n).ravel()
    for k in range(len(times) - 1):
        z0 = np.concatenate([np.log(nodes[k][I]), eye])
        # the high-order pair needs far fewer steps at this tolerance
        sol = solve_ivp(rhs, (times[k], times[k + 1]), z0, method="DOP853", rtol=SWEEP_RTOL, atol=SWEEP_ATOL)
        if not sol.success:
            raise RuntimeError(f"step matrix integration failed at t={times[k]}: {sol.message}")
        out[k] = sol.y[m:, -1].reshape(n, n)
    return out


@dataclass
class Sweep:
    """Step matrices on a uniform grid with forward/backward QR frames."""

    times: np.ndarray
    phi: np.ndarray  # (K-1, n, n): M(t_{k+1}, t_k)
    exponents: np.ndarray  # forward Lyapunov-type exponents, descending
    unstable_dim: int
    q_fwd: np.ndarray  # (K, n, n): leading columns span the unstable space
    q_bwd: np.ndarray  # (K, n, n): leading columns span the stable space

    @property
    def n(self):
        return self.phi.shape[1]

    @property
    def stable_dim(self):
        return self.n - self.unstable_dim

    def bases(self, k: int):
        m = self.unstable_dim
        return self.q_bwd[k][:, : self.n - m], self.q_fwd[k][:, :m]

    def projection(self, k: int) -> np.ndarray:
        """Projection onto the stable span along the unstable span at ``times[k]``."""
        S, U = self.bases(k)
        n = self.n
        if S.shape[1] == 0:
            return np.zeros((n, n))
        if U.shape[1] == 0:
            return np.eye(n)
        W = np.hstack([S, U])
        sel = np.zeros((n, n))
        sel[: S.shape[1], : S.shape[1]] = np.eye(S.shape[1])
        return W @ sel @ np.linalg.inv(W)

    def index(self, t: float) -> int:
        k = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        if not 0 <= k < len(self.times) or abs(self.times[k] - t) > 1e-9:
            raise ValueError(f"t={t} is not a sweep node")
        return k


def sweep(ls: LinearizedSystem, t_a: float, t_b: float, h: float = STEP, seed: int = 0, gap: float = GAP) -> Sweep:
    """Forward and backward QR sweeps over ``[t_a, t_b]`` with step ``h``."""
    K = int(round((t_b - t_a) / h))
    times = t_a + h * np.arange(K + 1)
    phi = _step_matrices(ls, times)
    n = ls.n
    rng = np.random.default_rng(seed)
    q0, _ = np.linalg.qr(rng.standard_normal((n, n)))
    q_fwd = np.empty((K + 1, n, n))
    q_fwd[0] = q0
    logs = np.zeros(n)
    for k in range(K):
        q, r = np.linalg.qr(phi[k] @ q_fwd[k])
        s = np.sign(np.diag(r))
        s[s == 0] = 1
        q_fwd[k + 1] = q * s
        logs += np.log(np.abs(np.diag(r)))
    exps = logs / (times[-1] - times[0])
    if np.any(np.abs(exps) < gap):
        raise SpectralGapError(f"exponent within {gap} of zero: {np.round(exps, 4).tolist()}")
    m = int(np.count_nonzero(exps > 0))
    q_bwd = np.empty((K + 1, n, n))
    q_bwd[K], _ = np.linalg.qr(rng.standard_normal((n, n)))
    for k in range(K - 1, -1, -1):
        q, r = np.linalg.qr(np.linalg.solve(phi[k], q_bwd[k + 1]))
        s = np.sign(np.diag(r))
        s[s == 0] = 1
        q_bwd[k] = q * s
    return Sweep(times, phi, exps, m, q_fwd, q_bwd)


def subspaces(ls: LinearizedSystem, t0: float, horizon: float = 20.0, cap: float = 160.0, h: float = STEP):
    """``(stable_basis, unstable_basis)`` at ``t0`` (orthonormal columns).

    The horizon is doubled (up to ``cap``) while an exponent is ambiguous.
    """
    H = horizon
    while True:
        t_a = max(t0 - H, ls.span[0])
        try:
            sw = sweep(ls, t_a + ((t0 - t_a) % h), t0 + H, h)
            k = sw.index(t0)
            return sw.bases(k)
        except SpectralGapError:
            H *= 2
            if H > cap:
                raise


# -- linking operators ---------------------------------------------------------------


def _block_integral(ls: LinearizedSystem, t0: float, t_end: float, left, right, transcribed=False):
    """Integrate ``J' = X(s) C(s) Y(s)`` from ``t0`` to ``t_end``.

    Converging orientation: ``X(s) = M_A(t0, s)``, ``Y(s) = M_B(s, t0)``.
    Transcribed orientation: ``X(s) = M_A(s, t0)``, ``Y(s) = M_B(t0, s)``.
    Returns the final J and the integrand norm history.
    """
    k, n = ls.k, ls.n
    m = n - k

    def rhs(s, z):
        X = z[: k * k].reshape(k, k)
        Y = z[k * k : k * k + m * m].reshape(m, m)
        D = ls.D(s)
        A, B, C = D[:k, :k], D[k:, k:], D[:k, k:]
        if transcribed:
            dX, dY = A @ X, -Y @ B
        else:
            dX, dY = -X @ A, B @ Y
        dJ = left @ X @ C @ Y @ right
        return np.concatenate([dX.ravel(), dY.ravel(), dJ.ravel()])

    z0 = np.concatenate([np.eye(k).ravel(), np.eye(m).ravel(), np.zeros(k * m)])
    sol = dopri(rhs, t0, z0, t_end, 1e-11, 1e-14)
    ts = sol.t
    norms = np.array([np.linalg.norm(rhs(s, z)[k * k + m * m :]) for s, z in zip(ts, sol.y)])
    return sol.y[-1][k * k + m * m :].reshape(k, m), ts, norms


def _tail(ts, norms):
    """Fitted decay exponent of the integrand over the last half and the tail estimate."""
    tt = np.abs(ts - ts[0])
    half = tt >= 0.5 * tt[-1]
    ok = half & (norms > 0)
    if np.count_nonzero(ok) < 3:
        return math.inf, 0.0
    slope = np.polyfit(tt[ok], np.log(norms[ok]), 1)[0]
    rate = -slope
    if rate <= 0:
        return rate, math.inf
    return rate, float(norms[-1] / rate)


def linking_operators(
    ls: LinearizedSystem,
    t0: float = 0.0,
    PA: Optional[np.ndarray] = None,
    PB: Optional[np.ndarray] = None,
    horizon: float = 10.0,
    cap: float = 160.0,
    tail_tol: float = 1e-9,
    orientation: str = "converging",
):
    """Off-diagonal blocks of the half-line projections for ``[[A, C], [0, B]]``.

    ``L^- = -P^A int_{-inf}^{t0} M_A(t0,s)^{..} C(s) M_B(s,t0) (I - P^B) ds`` in
    the converging orientation (returned with the sign that makes the kernel of
    ``[[P^A, L^-], [0, P^B]]`` the backward-bounded solutions), and
    ``L^+ = (I - P^A) int_{t0}^{inf} ... P^B ds``.  Returns a dict with both
    operators and their tail estimates.  ``orientation="transcribed"`` uses
    ``M_A(s) P^A C M_B(s)^{-1}`` and raises :class:`DivergenceError` when the
    integrand does not decay.
    """
    k, n = ls.k, ls.n
    m = n - k
    PA = np.eye(k) if PA is None else np.asarray(PA, float)
    PB = np.zeros((m, m)) if PB is None else np.asarray(PB, float)
    transcribed = orientation == "transcribed"
    out = {}
    for name, left, right, sign in (
        ("minus", PA, np.eye(m) - PB, -1.0),
        ("plus", np.eye(k) - PA, PB, 1.0),
    ):
        if not np.any(left) or not np.any(right) or k == 0 or m == 0:
            out[name] = np.zeros((k, m))
            out[name + "_tail"] = 0.0
            continue
        H = horizon
        while True:
            t_end = t0 + sign * H
            if sign < 0 and t_end < ls.span[0]:
                t_end = ls.span[0]
            J, ts, norms = _block_integral(ls, t0, t_end, left, right, transcribed)
            rate, tail = _tail(ts, norms)
            if rate <= 0:
                raise DivergenceError(f"linking integrand does not decay (fitted exponent {-rate:.4g})", -rate)
            if tail < tail_tol or H >= cap or t_end == ls.span[0]:
                break
            H *= 2
        # integral from t0 towards -inf is -J for the minus operator
        out[name] = J if sign < 0 else -J
        out[name + "_tail"] = tail
        out[name + "_rate"] = rate
    return out


def link_projection(PA, PB, Lminus, Lplus):
    """The dichotomy projection on R: range of ``P^+``, kernel of ``P^-``."""
    k, m = Lminus.shape
    Pm = np.block([[PA, Lminus], [np.zeros((m, k)), PB]])
    Pp = np.block([[PA, Lplus], [np.zeros((m, k)), PB]])
    R = orth(Pp) if np.any(Pp) else np.zeros((k + m, 0))
    N = null_space(Pm)
    return _projector(R, N), R, N


def _projector(R, N):
    n = R.shape[0] if R.size else N.shape[0]
    if R.shape[1] == 0:
        return np.zeros((n, n))
    if N.shape[1] == 0:
        return np.eye(n)
    W = np.hstack([R, N])
    sel = np.zeros((n, n))
    sel[: R.shape[1], : R.shape[1]] = np.eye(R.shape[1])
    return W @ sel @ np.linalg.inv(W)


def _angle(X, Y) -> float:
    if X.shape[1] != Y.shape[1]:
        return math.pi / 2
    if X.shape[1] == 0:
        return 0.0
    return float(np.max(subspace_angles(X, Y)))


# -- certificate -----------------------------------------------------------------


@dataclass
class DichotomyCertificate:
    support: Optional[SupportSet]
    P0: np.ndarray
    times: np.ndarray
    Pt_samples: np.ndarray
    k_const: float
    alpha: float
    beta: float
    residual_invariance: float
    residual_bounds: dict
    projector_residual: float
    stable_dim: int
    unstable_dim: int
    exponents: np.ndarray
    window: tuple
    horizon: float
    linking: dict = field(default_factory=dict)
    sweep: Optional[Sweep] = field(default=None, repr=False)
    linsys: Optional[LinearizedSystem] = field(default=None, repr=False)

    def P(self, t: float) -> np.ndarray:
        """P(t) in species order at a sweep node (or transported from the nearest one)."""
        sw = self.sweep
        h = sw.times[1] - sw.times[0]
        k = int(np.clip(round((t - sw.times[0]) / h), 0, len(sw.times) - 1))
        Pk = sw.projection(k)
        if abs(sw.times[k] - t) > 1e-12:
            M = integrate_matrix(self.linsys.D, sw.times[k], t, MAT_RTOL, MAT_ATOL, dim=sw.n)
            Pk = M @ Pk @ np.linalg.inv(M)
        return self.linsys.to_original(Pk)

    def unstable_basis(self, t: float) -> np.ndarray:
        """Orthonormal basis (species order) of range(I - P(t))."""
        P = self.P(t)
        return orth(np.eye(P.shape[0]) - P) if self.unstable_dim else np.zeros((P.shape[0], 0))

    def to_json(self) -> dict:
        return {
            "support": self.support.label() if self.support is not None else None,
            "P0": self.P0,
            "k": self.k_const,
            "alpha": self.alpha,
            "beta": self.beta,
            "residual_invariance": self.residual_invariance,
            "residual_bounds": self.residual_bounds,
            "projector_residual": self.projector_residual,
            "stable_dim": self.stable_dim,
            "unstable_dim": self.unstable_dim,
            "exponents": self.exponents,
            "window": list(self.window),
            "horizon": self.horizon,
            "samples": [{"t": float(t), "P": P} for t, P in zip(self.times, self.Pt_samples)],
            "linking": {k: v for k, v in self.linking.items() if not isinstance(v, np.ndarray) or v.size < 64},
        }


def _chains(sw: Sweep, projs, i0: int, i1: int):
    """``||M(t_j, t_i0) P(t_i0)||`` for j >= i0 up to i1, via re-projected products."""
    X = projs[i0].copy()
    out = [np.linalg.norm(X, 2)]
    for j in range(i0, i1):
        X = projs[j + 1] @ (sw.phi[j] @ X)
        out.append(np.linalg.norm(X, 2))
    return np.array(out)


def _back_chains(sw: Sweep, projs, i0: int, i1: int):
    """``||M(t_j, t_i0) (I - P(t_i0))||`` for j <= i0 down to i1."""
    n = sw.n
    I = np.eye(n)
    X = I - projs[i0]
    out = [np.linalg.norm(X, 2)]
    for j in range(i0 - 1, i1 - 1, -1):
        X = (I - projs[j]) @ np.linalg.solve(sw.phi[j], X)
        out.append(np.linalg.norm(X, 2))
    return np.array(out)


def _pair_norms(sw, projs, lo_idx, hi_idx, step_counts):
    """Samples (Delta, ||M P||) forward and (Delta, ||M (I-P)||) backward."""
    h = sw.times[1] - sw.times[0]
    fwd, bwd = [], []
    max_steps = max(step_counts)
    for i in range(lo_idx, hi_idx + 1):
        top = min(hi_idx, i + max_steps)
        ch = _chains(sw, projs, i, top)
        for s in step_counts:
            if i + s <= hi_idx:
                fwd.append((s * h, ch[s]))
        bot = max(lo_idx, i - max_steps)
        bch = _back_chains(sw, projs, i, bot)
        for s in step_counts:
            if i - s >= lo_idx:
                bwd.append((s * h, bch[s]))
        fwd.append((0.0, ch[0]))
        bwd.append((0.0, bch[0]))
    return np.array(fwd), np.array(bwd)


def _fit_rate(samples, dim):
    """Decay exponent from log-linear regression over Delta > 0 (1.0 if the space is trivial)."""
    if dim == 0:
        return 1.0
    sel = (samples[:, 0] > 0) & (samples[:, 1] > 0)
    slope = np.polyfit(samples[sel, 0], np.log(samples[sel, 1]), 1)[0]
    return float(-slope)


def verify_bounds(cert: DichotomyCertificate, refine: int = 2, slack: float = 1.05, max_delta: float = 10.0):
    """Re-check the dichotomy bounds ``|M(t,s)P(s)| <= k e^{-alpha(t-s)}`` and
    ``|M(s,t)(I-P(t))| <= k e^{-beta(t-s)}`` on a grid ``refine`` times finer
    than the certificate's.

    A fresh sweep at step ``h / refine`` gives P at the fine nodes; every node
    pair in the window with ``0 <= t - s <= max_delta`` is tested against
    ``slack * k * exp(-alpha (t - s))`` (and the backward analogue).  Returns
    the worst ratios for the forward and backward bounds; both must be <= 1.
    """
    old = cert.sweep
    h = (old.times[1] - old.times[0]) / refine
    sw = sweep(cert.linsys, old.times[0], old.times[-1], h)
    lo_idx, hi_idx = sw.index(cert.window[0]), sw.index(cert.window[1])
    projs = [sw.projection(i) for i in range(len(sw.times))]
    steps = list(range(1, int(round(max_delta / h)) + 1))
    fwd, bwd = _pair_norms(sw, projs, lo_idx, hi_idx, steps)
    r4 = fwd[:, 1] / (slack * cert.k_const * np.exp(-cert.alpha * fwd[:, 0]))
    r5 = bwd[:, 1] / (slack * cert.k_const * np.exp(-cert.beta * bwd[:, 0]))
    return float(np.max(r4)), float(np.max(r5))


def build_certificate(
    ls: LinearizedSystem,
    window=(-10.0, 10.0),
    tol: float = 1e-6,
    horizon: float = 20.0,
    cap: float = 80.0,
    h: float = STEP,
    sample_times=None,
    cross_check: bool = True,
) -> DichotomyCertificate:
    """Dichotomy certificate of ``ls`` on ``window``.

    ``P(t)`` comes from the subspace sweeps; ``alpha``/``beta`` from
    log-linear regression of ``||M(t,s)P(s)||`` and ``||M(s,t)(I-P(t))||`` over
    node pairs with ``t - s`` in {0.5, 1, 2, 5, 10}; ``k`` is the smallest
    constant making both bounds hold on those pairs.
    """
    t_lo, t_hi = map(float, window)
    H = horizon
    while True:
        t_a = t_lo - H
        if t_a < ls.span[0]:
            t_a = t_lo - h * math.floor((t_lo - ls.span[0]) / h)
        try:
            sw = sweep(ls, t_a, t_hi + H, h)
        except SpectralGapError:
            if 2 * H > cap:
                raise
            H *= 2
            continue
        lo_idx, hi_idx = sw.index(t_lo), sw.index(t_hi)
        projs = [sw.projection(i) for i in range(len(sw.times))]
        # invariance residual over pairs
        steps = [int(round(dl / h)) for dl in PAIR_DELTAS]
        inv = 0.0
        for i in range(lo_idx, hi_idx + 1):
            M = np.eye(sw.n)
            for j in range(i, min(hi_idx, i + max(steps))):
                M = sw.phi[j] @ M
                s = j + 1 - i
                if s in steps:
                    r = np.linalg.norm(projs[j + 1] @ M - M @ projs[i], 2) / max(1.0, np.linalg.norm(M, 2))
                    inv = max(inv, r)
        if inv <= tol or 2 * H > cap or t_a > t_lo - H:
            break
        H *= 2
    idem = max(np.linalg.norm(P @ P - P, 2) for P in projs[lo_idx : hi_idx + 1])
    k0 = sw.index(0.0) if t_lo <= 0.0 <= t_hi else lo_idx
    P0 = ls.to_original(projs[k0])
    if np.linalg.norm(projs[k0] @ projs[k0] - projs[k0], 2) > 1e-8:
        raise IllConditionedSplitting(f"projector residual {idem:.3g} exceeds 1e-8")
    # k, alpha, beta are fitted on every node pair with t - s <= 10 (this
    # contains the pair set used for the invariance residual)
    fwd, bwd = _pair_norms(sw, projs, lo_idx, hi_idx, list(range(1, max(steps) + 1)))
    alpha = _fit_rate(fwd, sw.stable_dim)
    beta = _fit_rate(bwd, sw.unstable_dim)
    if alpha <= 0 or beta <= 0:
        raise SpectralGapError(f"fitted rates not positive: alpha={alpha:.4g}, beta={beta:.4g}")
    kc = max(
        1.0,
        float(np.max(fwd[:, 1] * np.exp(alpha * fwd[:, 0]))),
        float(np.max(bwd[:, 1] * np.exp(beta * bwd[:, 0]))),
    )
    r4 = float(np.max(fwd[:, 1] - kc * np.exp(-alpha * fwd[:, 0])))
    r5 = float(np.max(bwd[:, 1] - kc * np.exp(-beta * bwd[:, 0])))
    if sample_times is None:
        idxs = list(range(lo_idx, hi_idx + 1, max(1, int(round(1.0 / h)))))
    else:
        idxs = [sw.index(float(t)) for t in sample_times]
    times = sw.times[idxs]
    Pt = np.array([ls.to_original(projs[i]) for i in idxs])
    cert = DichotomyCertificate(
        ls.base.support if ls.base is not None else None,
        P0,
        times,
        Pt,
        kc,
        alpha,
        beta,
        float(inv),
        {"forward_bound": r4, "backward_bound": r5, "sup_norm_P": float(max(np.linalg.norm(P, 2) for P in projs[lo_idx : hi_idx + 1]))},
        float(idem),
        sw.stable_dim,
        sw.unstable_dim,
        sw.exponents,
        (t_lo, t_hi),
        H,
        {},
        sw,
        ls,
    )
    if cross_check and 0 < ls.k < ls.n and t_lo <= 0.0 <= t_hi:
        cert.linking = cross_check_linking(cert)
    return cert


def cross_check_linking(cert: DichotomyCertificate, t0: float = 0.0) -> dict:
    """Compare the linking-operator projection with the subspace one at ``t0``."""
    ls, sw = cert.linsys, cert.sweep
    k = ls.k
    # block projections from the block exponents: A is treated as a whole
    # (stable or unstable), B is diagonal so its projection is diagonal.
    kt = sw.index(t0)
    span = (sw.times[0], sw.times[-1])
    ts = np.linspace(*span, 201)
    Bdiag = np.array([np.diag(ls.B(t)) for t in ts]).mean(axis=0)
    PB = np.diag((Bdiag < 0).astype(float))
    sub = sw.projection(kt)
    PA = np.eye(k) if np.allclose(sub[:k, :k], np.eye(k), atol=1e-6) else np.zeros((k, k))
    try:
        ops = linking_operators(ls, t0, PA, PB)
    except DivergenceError as exc:
        return {"status": "divergent", "exponent": exc.exponent}
    P_link, R, N = link_projection(PA, PB, ops["minus"], ops["plus"])
    S, U = sw.bases(kt)
    ang_range = _angle(R, S)
    ang_kernel = _angle(N, U)
    return {
        "status": "agree" if max(ang_range, ang_kernel) <= 1e-6 else "disagree",
        "angle_range": ang_range,
        "angle_kernel": ang_kernel,
        "L_minus": ops["minus"],
        "L_plus": ops["plus"],
        "tail_minus": ops["minus_tail"],
        "P_link": ls.to_original(P_link),
    }
