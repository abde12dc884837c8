"""Per-block table along eps_n = 1/n: F_n exponent, its lower bound, diagonal mass and TV."""

import argparse
import csv
import math
import sys

from eotlab.blockmodel import ModelParams, build_model, entropy_H
from eotlab.diagnostics import Harmonic, block_estimates_check, solve_schedule
from eotlab.schrodinger import tv_to_diagonal


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=18)
    ap.add_argument("--a", type=float, default=0.1)
    ap.add_argument("--kappa", type=float, default=0.5)
    ap.add_argument("--b", type=float, default=1.0)
    ap.add_argument("--csv", help="optional output path")
    args = ap.parse_args(argv)

    model = build_model(ModelParams(args.a, args.kappa, args.b, args.N))
    sols = solve_schedule(model, Harmonic(args.N).eps_values())
    rep = block_estimates_check(model, solutions=sols)
    H = entropy_H(model)
    header = ["n", "eps", "eps_log_F_n", "c_bound", "d_over_b_bound", "log_delta_minus_a_bound",
              "tv", "tv_bound"]
    rows = []
    for q in rep.quantities:
        n, eps = q.n, q.eps
        w, m = model.w[n - 1], model.m[n - 1]
        c_bound = eps * math.log(w / 16) - (args.b - args.kappa)
        rows.append([n, eps, eps * q.log_F_n, c_bound,
                     math.exp(q.log_d) / (w / (4 * (m + 1))),
                     q.log_delta - math.log(eps * H / (2 * model.L[n - 1])),
                     tv_to_diagonal(sols[eps]), eps * H / args.a])
    print(" ".join(f"{h:>14}" for h in header))
    for r in rows:
        print(f"{r[0]:>14d} " + " ".join(f"{v:>14.6g}" for v in r[1:]))
    print(f"n0_b={rep.n0_b} n0_c={rep.n0_c} "
          f"hard failures={sum(not r.passed for r in rep.reports if r.hard)}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)


if __name__ == "__main__":
    sys.exit(main())
