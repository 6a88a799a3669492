"""Entropic transport against the exact LP on random small instances.

For each rho factor, reports the worst gap |W_rho - W| next to the entropy
bound rho * log(n1 n2), the worst duality gap and the total solve time.

    python scripts/ot_check.py --instances 200
"""

import argparse
import time

import numpy as np

from wassrl.entropic_ot import OtConfig, dual_objective, exact_emd, sinkhorn
from wassrl.measures import DiscreteMeasure, build_cost_matrix


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--max-atoms", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--factors", type=float, nargs="+", default=[1.0, 0.1, 0.01])
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    problems = []
    for _ in range(args.instances):
        n, m = rng.integers(1, args.max_atoms + 1, size=2)
        mu = DiscreteMeasure(rng.normal(size=(n, 2)), rng.uniform(0.1, 1.0, n))
        nu = DiscreteMeasure(rng.normal(size=(m, 2)), rng.uniform(0.1, 1.0, m))
        C = build_cost_matrix(mu, nu, "euclidean")
        problems.append((mu, nu, C, exact_emd(mu, nu, C)[1]))
    print(f"{'rho/mean(C)':>11} {'worst gap/bound':>15} {'dual gap':>9} {'log-domain':>10} {'seconds':>8}")
    for factor in args.factors:
        ratio, dual_gap, logd = 0.0, 0.0, 0
        start = time.perf_counter()
        for mu, nu, C, exact in problems:
            rho = factor * float(C.mean())
            res = sinkhorn(mu, nu, C, OtConfig(rho=rho, tol=1e-10))
            bound = rho * np.log(mu.size * nu.size)
            if bound > 0:
                ratio = max(ratio, abs(res.primal_value - exact) / bound)
            dual = dual_objective(res.dual_u, res.dual_v, mu, nu, C, rho)
            dual_gap = max(dual_gap, abs(dual - res.primal_value))
            logd += res.log_domain
        elapsed = time.perf_counter() - start
        print(f"{factor:>11g} {ratio:>15.3f} {dual_gap:>9.1e} {logd:>10d} {elapsed:>8.2f}")


if __name__ == "__main__":
    main()
