"""Gridworld attraction study: lam=-1 vs lam=0 at timeouts 30, 40 and 50.

Runs the six shipped configs through the CLI runner, prints the best
checkpoint return per seed and per-arm medians, and writes one SVG of
learning curves per timeout.

    python scripts/reproduce_gridworld.py --out runs/gridworld
"""

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from wassrl import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def best_per_seed(out: Path) -> list[float]:
    manifest = json.loads((out / "manifest.json").read_text())
    best = []
    for run in manifest["runs"]:
        with open(out / run["csv"], newline="") as fh:
            best.append(max(float(r["return"]) for r in csv.DictReader(fh)))
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/gridworld")
    ap.add_argument("--timeouts", type=int, nargs="+", default=[30, 40, 50])
    ap.add_argument("--seeds", type=int, nargs="+", help="override the configs' seed list")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    root = Path(args.out)
    print(f"{'timeout':>7} {'lam':>4}  best per seed                 median")
    for t in args.timeouts:
        csvs = []
        for lam, suffix in ((-1, ""), (0, "_lam0")):
            out = root / f"t{t}{suffix}"
            code = cli.run(CONFIGS / f"attract_t{t}{suffix}.cfg", seeds=args.seeds, out_dir=out, jobs=args.jobs)
            if code != 0:
                raise SystemExit(code)
            best = best_per_seed(out)
            print(f"{t:>7} {lam:>4}  {str(best):<30} {np.median(best):g}")
            csvs += sorted(out.glob("*.csv"))
        cli.plot(csvs, root / f"curves_t{t}.svg")


if __name__ == "__main__":
    main()
