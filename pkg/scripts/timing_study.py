#!/usr/bin/env python3
"""Reproduce the complexity study: wall time and exponential-sum size vs N.

Produces one CSV with fast/direct timings (median of 3) plus log-log slope
summary lines, and one kernel-certification CSV.
"""

import argparse
import pathlib
import sys

from tfade.cli import main as tfade_main


def sh(args):
    print("$ tfade " + " ".join(args))
    rc = tfade_main(args)
    if rc != 0:
        sys.exit(rc)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="results", help="directory for the CSVs")
    ap.add_argument("--quick", action="store_true",
                    help="smaller N range for a fast smoke run")
    args = ap.parse_args()
    out = pathlib.Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)

    n_list = "32,64,128,256,512" if args.quick else "128,256,512,1024,2048"
    sh(["bench", "--case", "1", "--alpha", "0.5", "--N", n_list, "--M", "64",
        "--out", str(out / "timing_vs_steps.csv")])
    sh(["soe-check", "--alpha", "0.5", "--eps", "1e-10",
        "--t-min", "1e-4", "--t-max", "2", "--samples", "10000",
        "--out", str(out / "kernel_certificate.csv")])
    print(f"timing study written to {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
