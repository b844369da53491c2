"""Plot-ready data for a 2-D phase portrait: complete solutions, connections
and a fan of forward trajectories, each labelled with its classification.

    python3 scripts/phase_portrait.py perm2d --out runs/portrait_perm2d

Outputs (CSV, header ``t,u1,u2`` unless noted):
  node_<tag>.csv       complete solutions on [t0 - 10, t0 + 10]
  edge_<src>_<dst>.csv connection trajectories
  orbit_<k>.csv        forward trajectories from a grid of initial data
  orbits.csv           k,u1,u2,case,forward_limit,escape_time
"""

import argparse
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lvfa.io import bundled_spec
from lvfa.odeint import integrate, write_csv
from lvfa.skeleton import build_skeleton, classify_initial


@dataclass
class Config:
    name: str = "perm2d"
    out: Path = Path("runs/portrait")
    grid: int = 5  # initial data per axis
    span: float = 2.0  # initial data in (0, span * d]
    t0: float = 0.0
    horizon: float = 20.0


def run(cfg: Config) -> None:
    spec, _ = bundled_spec(cfg.name)
    if spec.n != 2:
        raise SystemExit(f"{cfg.name} is {spec.n}-dimensional; phase portraits are 2-D")
    cfg.out.mkdir(parents=True, exist_ok=True)
    g = build_skeleton(spec, t0=cfg.t0, annotate=False)
    ts = np.linspace(cfg.t0 - 10, cfg.t0 + 10, 401)
    for sol in g.solutions:
        write_csv(cfg.out / f"node_{sol.support.tag()}.csv", ts, sol(ts))
    for e in g.edges:
        tr = e.trajectory
        write_csv(cfg.out / f"edge_{e.source.tag()}_{e.target.tag()}.csv", tr.times, tr.states)
    d = g.regime_info.witness.d if g.regime_info.witness is not None else np.ones(2)
    axis = [np.linspace(0, cfg.span * d[i], cfg.grid + 1) for i in range(2)]
    rows = []
    k = 0
    for x in axis[0]:
        for y in axis[1]:
            u0 = np.array([x, y])
            lab = classify_initial(spec, u0, cfg.t0, g.solutions, regime=g.regime_info)
            tr = integrate(spec, cfg.t0, u0, cfg.t0 + cfg.horizon)
            write_csv(cfg.out / f"orbit_{k}.csv", tr.times, tr.states)
            rows.append([k, x, y, lab.letter, lab.forward_limit, lab.escape_time])
            k += 1
    with open(cfg.out / "orbits.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "u1", "u2", "case", "forward_limit", "escape_time"])
        w.writerows(rows)
    cases = sorted({r[3] for r in rows})
    print(f"{cfg.name}: {len(g.nodes)} nodes, {len(g.edges)} edges, {len(rows)} orbits, cases {cases} -> {cfg.out}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("name", nargs="?", default=Config.name)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--grid", type=int, default=Config.grid)
    a = p.parse_args()
    run(Config(name=a.name, out=a.out or Path(f"runs/portrait_{a.name}"), grid=a.grid))
