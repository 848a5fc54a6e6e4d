"""Principal eigenvalues of Q_{R,k} over a radius sweep, with scaling fits.

    python3 scripts/spectrum_sweep.py --modes 0 1 2 --radii 50 100 200 400 800
"""
import argparse
import csv
import sys

import numpy as np

from llgblowup.spectral import SpectralProblem, principal_eigenvalue


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--modes", type=int, nargs="+", default=[0, 1])
    ap.add_argument("--radii", type=float, nargs="+", default=[50, 100, 200, 400, 800])
    ap.add_argument("--n", type=int, default=2000)
    args = ap.parse_args()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["k", "R", "lambda", "lambda_R2lnR", "lambda_R4", "residual", "iterations"])
    R = np.array(args.radii)
    for k in args.modes:
        lams = []
        for r in R:
            est = principal_eigenvalue(SpectralProblem(k, r, args.n))
            lams.append(est.lambda_min)
            w.writerow([k, r, f"{est.lambda_min:.10e}", f"{est.lambda_min * r * r * np.log(r):.6f}",
                        f"{est.lambda_min * r**4:.6f}", f"{est.residual:.2e}", est.iterations])
        lams = np.array(lams)
        if np.all(lams > 0) and len(R) > 1:
            slope = np.polyfit(np.log(R), np.log(lams), 1)[0]
            print(f"# k={k}: log-log slope {slope:.4f}", file=sys.stderr)


if __name__ == "__main__":
    main()
