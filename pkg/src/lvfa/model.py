"""Cooperative Lotka-Volterra systems ``u_i' = u_i (a_i(t) - sum_j b_ij(t) u_j)``."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .expr import _SCALAR_NS, EvaluationError, ExprError, TimeFn, _codegen, estimate_bounds, parse_timefn

__all__ = [
    "COOPERATIVE_TOL",
    "SpecError",
    "Violation",
    "SupportSet",
    "SystemSpec",
    "make_spec",
    "validate_spec",
    "require_valid",
    "subcommunity",
    "embed",
    "all_supports",
]

COOPERATIVE_TOL = 1e-12
DEFAULT_WINDOW = (-200.0, 200.0)
DEFAULT_SAMPLES = 40001
MAX_DIM = 8


class SpecError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"invalid system: {lines}{more}")


@dataclass(frozen=True)
class Violation:
    kind: str  # "sign" | "positivity" | "evaluation" | "bounds"
    i: int
    j: int
    t: float
    detail: str = ""

    def __str__(self):
        where = f"b[{self.i + 1},{self.j + 1}]" if self.j >= 0 else f"a[{self.i + 1}]"
        return f"{self.kind} violation at {where}, t={self.t:.6g}" + (f": {self.detail}" if self.detail else "")


@dataclass(frozen=True, order=True)
class SupportSet:
    """Indices (0-based) of species that are present; the rest are absent."""

    present: tuple[int, ...]
    n: int

    def __post_init__(self):
        p = tuple(sorted(set(int(i) for i in self.present)))
        if any(i < 0 or i >= self.n for i in p):
            raise ValueError(f"support {p} out of range for n={self.n}")
        object.__setattr__(self, "present", p)

    @classmethod
    def full(cls, n: int) -> "SupportSet":
        return cls(tuple(range(n)), n)

    @classmethod
    def of(cls, u0, n: int | None = None) -> "SupportSet":
        """Support of a state vector: bit-exact zeros are absent."""
        u0 = np.asarray(u0, dtype=float)
        return cls(tuple(int(i) for i in np.flatnonzero(u0 != 0.0)), len(u0) if n is None else n)

    @property
    def absent(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if i not in self.present)

    @property
    def size(self) -> int:
        return len(self.present)

    def __contains__(self, i) -> bool:
        return i in self.present

    def issubset(self, other: "SupportSet") -> bool:
        return set(self.present) <= set(other.present)

    def is_proper_subset(self, other: "SupportSet") -> bool:
        return set(self.present) < set(other.present)

    def label(self) -> str:
        """1-based set notation, e.g. ``{1,3}``; the empty support is ``{}``."""
        return "{" + ",".join(str(i + 1) for i in self.present) + "}"

    def tag(self) -> str:
        return "S" + ("".join(str(i + 1) for i in self.present) or "0")

    def __str__(self):
        return self.label()


def all_supports(n: int) -> list[SupportSet]:
    """Every support, smallest first, lexicographic within a size."""
    out = []
    for k in range(n + 1):
        out.extend(SupportSet(c, n) for c in itertools.combinations(range(n), k))
    return out


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """An ``n``-species cooperative LV system with its sampling configuration.

    ``indices`` maps local species to the species of the system this one was
    restricted from (see :func:`subcommunity`); it is the identity for a
    top-level system.
    """

    a: tuple[TimeFn, ...]
    b: tuple[tuple[TimeFn, ...], ...]
    window: tuple[float, float] = DEFAULT_WINDOW
    samples: int = DEFAULT_SAMPLES
    indices: tuple[int, ...] | None = None
    parent_n: int | None = None
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = len(self.a)
        if len(self.b) != n or any(len(row) != n for row in self.b):
            raise ValueError(f"b must be {n}x{n}")
        if n > MAX_DIM:
            raise ValueError(f"dimension {n} exceeds supported maximum {MAX_DIM}")
        if self.indices is None:
            object.__setattr__(self, "indices", tuple(range(n)))
        if self.parent_n is None:
            object.__setattr__(self, "parent_n", n)
        if self.samples < 2:
            raise ValueError("samples must be at least 2")
        lo, hi = self.window
        if not lo < hi:
            raise ValueError(f"empty check window {self.window}")
        self._build_coefficients()

    @property
    def n(self) -> int:
        return len(self.a)

    def _build_coefficients(self):
        n = self.n
        fns = list(self.a) + [f for row in self.b for f in row]
        if all(f.is_constant for f in fns):
            a0 = np.array([f.constant for f in self.a], dtype=float)
            b0 = np.array([[f.constant for f in row] for row in self.b], dtype=float).reshape(n, n)
            a0.setflags(write=False)
            b0.setflags(write=False)

            def coeffs(t):
                return a0, b0

            object.__setattr__(self, "autonomous", True)
        else:
            fused = _fuse(fns)

            def coeffs(t):
                vals = np.array(fused(t), dtype=float)
                return vals[:n], vals[n:].reshape(n, n)

            object.__setattr__(self, "autonomous", False)
        object.__setattr__(self, "coefficients", coeffs)

    def vector_field(self, t: float, u) -> np.ndarray:
        a, b = self.coefficients(t)
        u = np.asarray(u, dtype=float)
        return u * (a - b @ u)

    def jacobian(self, t: float, u) -> np.ndarray:
        a, b = self.coefficients(t)
        u = np.asarray(u, dtype=float)
        jac = -u[:, None] * b
        jac[np.diag_indices(self.n)] += a - b @ u
        return jac

    def sample_coefficients(self, ts) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised ``a`` (len(ts), n) and ``b`` (len(ts), n, n) on ``ts``."""
        ts = np.asarray(ts, dtype=float)
        n = self.n
        a = np.empty((ts.size, n))
        b = np.empty((ts.size, n, n))
        for i in range(n):
            a[:, i] = self.a[i].sample(ts)
            for j in range(n):
                b[:, i, j] = self.b[i][j].sample(ts)
        return a, b

    @cached_property
    def grid(self) -> np.ndarray:
        return np.linspace(self.window[0], self.window[1], self.samples)

    @cached_property
    def sampled(self) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients on the check grid (cached; treat as read-only)."""
        a, b = self.sample_coefficients(self.grid)
        a.setflags(write=False)
        b.setflags(write=False)
        return a, b

    @cached_property
    def bounds(self) -> dict:
        """``{"a": (inf, sup) arrays, "b": (inf, sup) arrays, "source": ...}`` over the window."""
        n = self.n
        a_lo, a_hi = np.empty(n), np.empty(n)
        b_lo, b_hi = np.empty((n, n)), np.empty((n, n))
        source = {}
        for i in range(n):
            a_lo[i], a_hi[i], source[f"a{i + 1}"] = estimate_bounds(self.a[i], self.window, self.samples)
            for j in range(n):
                b_lo[i, j], b_hi[i, j], source[f"b{i + 1}{j + 1}"] = estimate_bounds(
                    self.b[i][j], self.window, self.samples
                )
        return {"a": (a_lo, a_hi), "b": (b_lo, b_hi), "source": source}

    def with_config(self, window=None, samples=None) -> "SystemSpec":
        return SystemSpec(
            self.a,
            self.b,
            tuple(window) if window is not None else self.window,
            samples if samples is not None else self.samples,
            self.indices,
            self.parent_n,
            self.names,
        )

    def __repr__(self):
        return f"SystemSpec(n={self.n}, a={list(self.a)!r})"


def _fuse(fns):
    """One generated function returning every coefficient value at ``t``."""
    ns = dict(_SCALAR_NS)
    ns["__builtins__"] = {}
    body = ", ".join(_codegen(f.ast, "scalar") for f in fns)
    return eval(f"lambda t: ({body},)", ns)  # noqa: S307 - generated from closed ASTs


def _as_timefn(x, bounds=None) -> TimeFn:
    if isinstance(x, TimeFn):
        return x
    if isinstance(x, (int, float)):
        x = repr(float(x))
    bounds = bounds or {}
    return parse_timefn(str(x), bounds.get("inf"), bounds.get("sup"))


def make_spec(a: Sequence, b: Sequence[Sequence], window=DEFAULT_WINDOW, samples=DEFAULT_SAMPLES, bounds=None) -> SystemSpec:
    """Build a :class:`SystemSpec` from expression strings (or numbers).

    ``bounds`` maps coefficient ids (``"a1"``, ``"b12"``, 1-based) to
    ``{"inf": .., "sup": ..}`` declarations.
    """
    bounds = bounds or {}
    n = len(a)
    af = tuple(_as_timefn(a[i], bounds.get(f"a{i + 1}")) for i in range(n))
    bf = tuple(
        tuple(_as_timefn(b[i][j], bounds.get(f"b{i + 1}{j + 1}")) for j in range(len(b[i]))) for i in range(len(b))
    )
    return SystemSpec(af, bf, tuple(float(w) for w in window), int(samples))


def validate_spec(spec: SystemSpec) -> list[Violation]:
    """Every violated standing assumption, each with a witness time.

    Checks: b_ii > 0, b_ij <= 1e-12 (i != j) on every grid sample, finite
    evaluation, and declared bounds consistent with the samples.
    """
    out: list[Violation] = []
    ts = spec.grid
    n = spec.n
    for i in range(n):
        for j in range(-1, n):
            f = spec.a[i] if j < 0 else spec.b[i][j]
            try:
                vals = f.sample(ts)
            except EvaluationError as exc:
                out.append(Violation("evaluation", i, j, float("nan"), str(exc)))
                continue
            bad = ~np.isfinite(vals)
            if np.any(bad):
                out.append(Violation("evaluation", i, j, float(ts[np.argmax(bad)]), "non-finite value"))
                continue
            if f.declared:
                try:
                    estimate_bounds(f, spec.window, spec.samples)
                except ExprError as exc:
                    out.append(Violation("bounds", i, j, getattr(exc, "t", float("nan")), str(exc)))
            if j < 0:
                continue
            if i == j:
                bad = vals <= 0.0
                if np.any(bad):
                    k = int(np.argmax(bad))
                    out.append(Violation("positivity", i, j, float(ts[k]), f"b_ii = {vals[k]:.6g} <= 0"))
            else:
                bad = vals > COOPERATIVE_TOL
                if np.any(bad):
                    k = int(np.argmax(bad))
                    out.append(Violation("sign", i, j, float(ts[k]), f"b_ij = {vals[k]:.6g} > 0"))
    return out


def require_valid(spec: SystemSpec) -> SystemSpec:
    violations = validate_spec(spec)
    if violations:
        raise SpecError(violations)
    return spec


def subcommunity(spec: SystemSpec, support: SupportSet | Iterable[int]) -> SystemSpec:
    """Restrict to the species in ``support`` (indices local to ``spec``).

    The result remembers which species of the top-level system it keeps, so
    its trajectories can be re-embedded with zeros elsewhere.
    """
    present = support.present if isinstance(support, SupportSet) else tuple(sorted(set(support)))
    if present == tuple(range(spec.n)):
        return spec
    a = tuple(spec.a[i] for i in present)
    b = tuple(tuple(spec.b[i][j] for j in present) for i in present)
    indices = tuple(spec.indices[i] for i in present)
    return SystemSpec(a, b, spec.window, spec.samples, indices, spec.parent_n, spec.names)


def embed(u_sub, sub: SystemSpec, n: int | None = None) -> np.ndarray:
    """Place local states of ``sub`` into the top-level coordinates (zeros elsewhere)."""
    u_sub = np.asarray(u_sub, dtype=float)
    n = sub.parent_n if n is None else n
    out = np.zeros(u_sub.shape[:-1] + (n,))
    out[..., list(sub.indices)] = u_sub
    return out


def vector_norm(x) -> float:
    return float(math.sqrt(float(np.dot(x, x))))
