"""Build the attractor skeleton of every bundled regime example.

Writes ``<out>/<name>/skeleton.json``, ``skeleton.dot`` and one trajectory
CSV per connection (the files the ``lvfa skeleton`` command produces), then
prints a node/edge count table.

    python3 scripts/run_skeletons.py --out runs/skeletons
"""

import argparse
import contextlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from lvfa.cli import main as lvfa
from lvfa.io import SPEC_DIR

EXPECTED = {
    "perm2d": (4, 5),
    "perm2d_periodic": (4, 5),
    "extinct1_2d": (2, 1),
    "total2d": (1, 0),
    "perm3d": (8, 19),
    "extinct1_3d": (4, 5),
    "extinct2_3d": (2, 1),
    "total3d": (1, 0),
}


@dataclass
class Config:
    out: Path = Path("runs/skeletons")
    names: list = field(default_factory=lambda: list(EXPECTED))
    seed: int = 42


def run(cfg: Config) -> int:
    failures = 0
    print(f"{'spec':18s} {'regime':18s} {'nodes':>5s} {'edges':>5s} {'expected':>9s} {'time':>7s}")
    for name in cfg.names:
        target = cfg.out / name
        target.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = lvfa(["skeleton", str(SPEC_DIR / f"{name}.json"), "-o", str(target), "--seed", str(cfg.seed)])
        elapsed = time.perf_counter() - start
        if code != 0:
            failures += 1
            print(f"{name:18s} failed with exit code {code}")
            continue
        doc = json.loads(buf.getvalue())
        got = (doc["counts"]["nodes"], doc["counts"]["edges"])
        exp = EXPECTED.get(name)
        failures += exp is not None and got != exp
        print(f"{name:18s} {doc['regime']:18s} {got[0]:5d} {got[1]:5d} {str(exp):>9s} {elapsed:6.1f}s")
    return failures


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Config.out)
    p.add_argument("--names", nargs="+", default=None, help=f"subset of {list(EXPECTED)}")
    p.add_argument("--seed", type=int, default=42)
    a = p.parse_args()
    cfg = Config(out=a.out, seed=a.seed, **({"names": a.names} if a.names else {}))
    raise SystemExit(1 if run(cfg) else 0)
