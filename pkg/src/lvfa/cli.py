"""Command-line front end.

Subcommands: ``check``, ``star``, ``dichotomy``, ``skeleton``, ``classify``
and ``trace``.  Structured results go to standard output (and to ``-o DIR``
when given) as deterministic JSON; trajectories are written as CSV and the
skeleton graph additionally as DOT.

Exit codes: 0 success, 2 a check/certification failed, 1 usage, parse or
input errors.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .conditions import Witness, check_A, check_B, check_H1, check_H2, search_witness
from .dichotomy import DichotomyCertificate, DivergenceError, IllConditionedSplitting, SpectralGapError, build_certificate, linearize
from .expr import ExprError
from .io import SpecFileError, atomic_write, dumps, load_spec_file
from .model import SpecError, SupportSet, all_supports, validate_spec
from .odeint import write_csv
from .skeleton import (
    ConnectionNotFound,
    RegimeInconsistency,
    SkeletonIncomplete,
    build_skeleton,
    classify_initial,
    detect_regime,
    to_dot,
    trace_connection,
)
from .trajectories import CertificateInconsistency, NonConvergenceError, compute_star, list_complete_solutions

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
NODE_WINDOW = (-40.0, 50.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def parse_support(text: str, n: int) -> SupportSet:
    """``"1,3"``, ``"{1,3}"``, ``"{}"`` or ``"full"`` (species are 1-based)."""
    text = text.strip()
    if text.lower() == "full":
        return SupportSet.full(n)
    inner = text.strip("{}").strip()
    try:
        idx = tuple(int(x) - 1 for x in inner.split(",") if x.strip())
        return SupportSet(idx, n)
    except ValueError as exc:
        raise UsageError(f"bad support {text!r}: {exc}") from exc


def _emit(doc, args, name: str) -> None:
    text = dumps(doc)
    sys.stdout.write(text)
    if getattr(args, "output", None):
        atomic_write(Path(args.output) / name, text)


def _load(args):
    window = tuple(args.window) if getattr(args, "window", None) and args.command == "check" else None
    spec, extras = load_spec_file(args.spec, window=window)
    problems = validate_spec(spec)
    if problems:
        raise SpecError(problems)
    witness = None
    if extras.get("witness"):
        witness = Witness.from_json(extras["witness"], spec.n)
    return spec, extras, witness


# -- check ---------------------------------------------------------------------------


def _dominance_report(spec, kind, witness, search):
    check = check_H1 if kind == "H1" else check_H2
    wkey, dkey = ("c", "delta_row") if kind == "H1" else ("cbar", "delta")
    if witness is not None and getattr(witness, wkey) is not None and getattr(witness, dkey) is not None:
        return check(spec, getattr(witness, wkey), getattr(witness, dkey)), None
    if not search:
        raise UsageError(f"witness required for {kind} ({wkey}, {dkey}) with --no-search")
    res = search_witness(spec, kind)
    if res.report is not None:
        return res.report, res
    # nothing found: show where uniform weights fail
    return check(spec, np.ones(spec.n), 1e-12), res


def _a_report(spec, support, witness, search):
    if witness is not None and witness.d is not None and (witness.dbar is not None or support.size == 0):
        dbar = witness.dbar if witness.dbar is not None else np.full(spec.n, np.nan)
        return check_A(spec, witness.d, dbar, support), None
    if not search:
        raise UsageError("witness required for A (d, dbar) with --no-search")
    res = search_witness(spec, "A", support)
    if res.report is not None:
        return res.report, res
    return None, res


def _b_report(spec, support, witness, search):
    if witness is not None and witness.eps is not None and witness.theta is not None and witness.c is not None:
        return check_B(spec, witness), None
    if not search:
        raise UsageError("witness required for B (c, d, dbar, eps, theta) with --no-search")
    res = search_witness(spec, "B", support)
    return res.report, res


def cmd_check(args) -> int:
    spec, extras, witness = _load(args)
    kinds = [k for k, on in (("H1", args.h1), ("H2", args.h2), ("A", args.a), ("B", args.b)) if on]
    kinds = kinds or ["H1", "H2", "A"]
    support = parse_support(args.support, spec.n) if args.support else (witness.support if witness else SupportSet.full(spec.n))
    search = not args.no_search
    out, ok = {}, True
    for kind in kinds:
        if kind in ("H1", "H2"):
            rep, res = _dominance_report(spec, kind, witness, search)
        elif kind == "A":
            rep, res = _a_report(spec, support, witness, search)
        else:
            rep, res = _b_report(spec, support, witness, search)
        passed = rep is not None and rep.passed and (res is None or res.witness is not None)
        ok &= passed
        out[kind] = {
            "passed": passed,
            "report": rep,
            "search": res.to_json() if res is not None else None,
        }
    doc = {"spec": str(args.spec), "support": support.label(), "checks": out, "passed": ok}
    _emit(doc, args, "check.json")
    return EXIT_OK if ok else EXIT_FAIL


# -- star / dichotomy ------------------------------------------------------------------


def _node_window(args):
    return tuple(args.window) if args.window else NODE_WINDOW


def cmd_star(args) -> int:
    spec, extras, witness = _load(args)
    support = parse_support(args.support, spec.n) if args.support else SupportSet.full(spec.n)
    w = witness if witness is not None and witness.support == support and witness.eps is None else None
    try:
        sol = compute_star(spec, support, _node_window(args), args.tol or 1e-8, w)
    except (NonConvergenceError, CertificateInconsistency, ValueError) as exc:
        _emit({"support": support.label(), "error": str(exc)}, args, f"star_{support.tag()}.json")
        return EXIT_FAIL
    doc = sol.to_json()
    doc["witness"] = sol.witness.to_json() if sol.witness is not None else None
    if args.output:
        csv = Path(args.output) / f"star_{support.tag()}.csv"
        write_csv(csv, sol.grid.times, sol.grid.states)
        doc["trajectory_file"] = csv.name
    _emit(doc, args, f"star_{support.tag()}.json")
    return EXIT_OK


def cmd_dichotomy(args) -> int:
    spec, extras, witness = _load(args)
    support = parse_support(args.support, spec.n) if args.support else SupportSet.full(spec.n)
    window = tuple(args.window) if args.window else (-10.0, 10.0)
    lo = min(NODE_WINDOW[0], window[0] - 30.0)
    try:
        base = compute_star(spec, support, (lo, max(NODE_WINDOW[1], window[1] + 30.0)))
        cert: DichotomyCertificate = build_certificate(linearize(spec, base), window=window, tol=args.tol or 1e-6)
    except (SpectralGapError, IllConditionedSplitting, DivergenceError, NonConvergenceError, CertificateInconsistency, ValueError) as exc:
        _emit({"support": support.label(), "error": str(exc)}, args, f"dichotomy_{support.tag()}.json")
        return EXIT_FAIL
    _emit(cert, args, f"dichotomy_{support.tag()}.json")
    return EXIT_OK


# -- skeleton / trace / classify --------------------------------------------------------


def _connection_csv(args, conn) -> str:
    name = f"edge_{conn.source.tag()}_{conn.target.tag()}.csv"
    write_csv(Path(args.output) / name, conn.trajectory.times, conn.trajectory.states)
    return name


def cmd_skeleton(args) -> int:
    spec, extras, witness = _load(args)
    witnesses = {"regime": witness} if witness is not None else {}
    try:
        graph = build_skeleton(
            spec, witnesses, window=_node_window(args), tol=args.tol or 1e-5, seed=args.seed, annotate=not args.no_annotate
        )
    except (SkeletonIncomplete, RegimeInconsistency) as exc:
        doc = {"error": str(exc), "missing": getattr(exc, "missing", None)}
        _emit(doc, args, "skeleton.json")
        return EXIT_FAIL
    files = {}
    if args.output:
        for e in graph.edges:
            files[(e.source.label(), e.target.label())] = _connection_csv(args, e)
        atomic_write(Path(args.output) / "skeleton.dot", to_dot(graph))
    _emit(graph.to_json(files), args, "skeleton.json")
    return EXIT_FAIL if graph.alarms else EXIT_OK


def cmd_trace(args) -> int:
    spec, extras, witness = _load(args)
    src = parse_support(args.source, spec.n)
    tgt = parse_support(args.target, spec.n)
    if not src.is_proper_subset(tgt):
        raise UsageError(f"source {src.label()} must be strictly inside target {tgt.label()}")
    window = _node_window(args)
    sols, failures = list_complete_solutions(spec, None, window, supports=[src, tgt])
    nodes = {s.support: s for s in sols}
    if src not in nodes or tgt not in nodes:
        _emit({"error": "complete solution not certified", "failures": failures}, args, "trace.json")
        return EXIT_FAIL
    try:
        cert = build_certificate(linearize(spec, nodes[src]), window=(args.t0 - 10.0, args.t0 + 10.0), cross_check=False)
        conn = trace_connection(spec, nodes[src], nodes[tgt], cert, args.t0, tol=args.tol or 1e-5)
    except (ConnectionNotFound, RegimeInconsistency, SpectralGapError, ValueError) as exc:
        _emit({"error": str(exc), "attempts": getattr(exc, "diagnostics", None)}, args, "trace.json")
        return EXIT_FAIL
    doc = conn.to_json()
    doc["attempts"] = conn.attempts
    if args.output:
        doc["trajectory_file"] = _connection_csv(args, conn)
    _emit(doc, args, "trace.json")
    return EXIT_OK


def cmd_classify(args) -> int:
    spec, extras, witness = _load(args)
    u0 = np.asarray(args.u0, dtype=float)
    if u0.shape != (spec.n,) or np.any(u0 < 0):
        raise UsageError(f"--u0 needs {spec.n} non-negative values")
    regime = detect_regime(spec, witness)
    supports = [s for s in all_supports(spec.n) if s.issubset(regime.persistent)]
    sols, _ = list_complete_solutions(spec, None, _node_window(args), supports=supports)
    label = classify_initial(spec, u0, args.t0, sols, args.tol or 1e-6, regime)
    doc = label.to_json()
    doc["u0"] = u0.tolist()
    doc["t0"] = args.t0
    _emit(doc, args, "classify.json")
    return EXIT_OK if label.letter != "unclassified" else EXIT_FAIL


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("spec", help="spec file (JSON)")
    common.add_argument("-o", "--output", metavar="DIR", help="also write results into DIR")
    common.add_argument("--window", nargs=2, type=float, metavar=("LO", "HI"), help="time window")
    common.add_argument("--tol", type=float, help="tolerance override")
    common.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    common.add_argument("--no-search", action="store_true", help="use only the witness in the spec file")

    p = _Parser(prog="lvfa", description="Forward-attractor skeletons of cooperative Lotka-Volterra systems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("check", parents=[common], help="check dominance / A / B conditions")
    c.add_argument("--h1", action="store_true")
    c.add_argument("--h2", action="store_true")
    c.add_argument("--a", action="store_true")
    c.add_argument("--b", action="store_true")
    c.add_argument("--support", help="support I for A/B, e.g. 1,2")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("star", parents=[common], help="complete solution on a support (CSV + JSON)")
    s.add_argument("--support")
    s.set_defaults(func=cmd_star)

    d = sub.add_parser("dichotomy", parents=[common], help="dichotomy certificate along a complete solution")
    d.add_argument("--support")
    d.set_defaults(func=cmd_dichotomy)

    k = sub.add_parser("skeleton", parents=[common], help="nodes and connections of the attractor")
    k.add_argument("--no-annotate", action="store_true", help="skip sampling of unbounded behaviour")
    k.set_defaults(func=cmd_skeleton)

    q = sub.add_parser("classify", parents=[common], help="case of the trajectory through u0")
    q.add_argument("--u0", nargs="+", type=float, required=True)
    q.add_argument("--t0", type=float, default=0.0)
    q.set_defaults(func=cmd_classify)

    t = sub.add_parser("trace", parents=[common], help="trace one connection source -> target")
    t.add_argument("--source", required=True)
    t.add_argument("--target", required=True)
    t.add_argument("--t0", type=float, default=0.0)
    t.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return args.func(args)
    except (UsageError, SpecFileError, SpecError, ExprError, FileNotFoundError) as exc:
        print(f"lvfa {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
