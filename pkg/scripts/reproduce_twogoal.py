"""Two-goal repulsion study: a repelled policy pair against an lam=0 control.

Both policies start from the same parameters, so only rollout noise and the
repulsive term can split them. Prints the final mean-x of each policy, whether
the pair ended on opposite sides at least half the goal separation apart, and
the rank correlation between iteration and the between-policy W estimate.

    python scripts/reproduce_twogoal.py --out runs/twogoal
"""

import argparse
import csv
import json
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from wassrl import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def summarise(out: Path) -> int:
    manifest = json.loads((out / "manifest.json").read_text())
    goals = np.asarray(manifest["config"]["twogoal"]["goals"], dtype=float)
    half = float(np.linalg.norm(goals[0] - goals[1])) / 2
    hits = 0
    for run in manifest["runs"]:
        with open(out / run["csv"], newline="") as fh:
            rows = list(csv.DictReader(fh))
        a, b = float(rows[-1]["mean_x_a"]), float(rows[-1]["mean_x_b"])
        ok = a * b < 0 and abs(a - b) >= half
        hits += ok
        w = [float(r["w_between_estimate"]) for r in rows[:100]]
        trend = spearmanr(np.arange(len(w)), w).statistic
        print(f"  seed {run['seed']}: mean_x {a:+.2f} / {b:+.2f}  split={ok}  W trend rho_s={trend:+.2f}")
    return hits


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/twogoal")
    ap.add_argument("--seeds", type=int, nargs="+", help="override the configs' seed list")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args(argv)
    root = Path(args.out)
    csvs = []
    for name in ("repulse_twogoal", "repulse_twogoal_lam0"):
        out = root / name
        code = cli.run(CONFIGS / f"{name}.cfg", args.overrides, seeds=args.seeds, out_dir=out, jobs=args.jobs)
        if code != 0:
            raise SystemExit(code)
        print(name)
        hits = summarise(out)
        print(f"  split in {hits} seeds")
        csvs += sorted(out.glob("*.csv"))
    cli.plot(csvs, root / "mean_x.svg")


if __name__ == "__main__":
    main()
