"""Recompute the non-local correction certificates and optionally store them
as the regression constants used by the acceptance suite.

    python3 scripts/certificates.py [--write]
"""
import argparse
import json
import time
from pathlib import Path

from llgblowup.correction import phi0_certificate, sj_certificate
from llgblowup.geometry import PhysParams

DEST = Path(__file__).resolve().parents[1] / "tests" / "data" / "certificates.json"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--a", type=float, default=0.8)
    ap.add_argument("--b", type=float, default=0.6)
    ap.add_argument("--grid", type=int, default=40)
    ap.add_argument("--write", action="store_true", help=f"overwrite {DEST.name}")
    args = ap.parse_args()
    pp = PhysParams(args.a, args.b)
    res = {"note": "first-run maxima of the certificate ratios; later runs may not exceed 1.5x",
           "a": args.a, "b": args.b, "grid": args.grid, "phi0": {}, "sj": {}}
    for T in (1e-3, 1e-4):
        t0 = time.perf_counter()
        res["phi0"][str(T)] = phi0_certificate(T, pp, n=args.grid)
        res["sj"][str(T)] = sj_certificate(T, pp, n=args.grid)
        print(f"T={T:g}: phi0 {res['phi0'][str(T)]:.4f}  Sj {res['sj'][str(T)]:.4f}  "
              f"({time.perf_counter() - t0:.1f} s)", flush=True)
    if args.write:
        DEST.write_text(json.dumps(res, indent=1) + "\n")
        print(f"wrote {DEST}")


if __name__ == "__main__":
    main()
