#!/usr/bin/env python3
"""Reproduce the full convergence study (temporal, spatial and H1 tables).

Drives the `tfade` CLI once per table and drops the CSVs into --outdir.
Temporal sweeps run all three benchmark cases at M = 2000; spatial sweeps fix
N per the study design (500 for case 1, 1000 for cases 2 and 3).
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
                    help="coarser grids for a fast smoke run")
    args = ap.parse_args()
    out = pathlib.Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)

    m_time = "200" if args.quick else "2000"
    n_time = "8,16,32" if args.quick else "16,32,64"

    for cid in (1, 2, 3):
        for alpha in ("0.25", "0.5"):
            sh(["convergence", "--case", str(cid), "--alpha", alpha,
                "--N", n_time, "--M", m_time, "--method", "both",
                "--out", str(out / f"time_case{cid}_alpha{alpha}.csv")])

    for alpha in ("0.25", "0.5"):
        sh(["convergence", "--case", "1", "--alpha", alpha,
            "--N", n_time, "--M", m_time, "--method", "both", "--norm", "h1",
            "--out", str(out / f"h1_case1_alpha{alpha}.csv")])

    for cid, n_fix in ((1, "500"), (2, "1000"), (3, "1000")):
        if args.quick:
            n_fix = "64"
        for alpha in ("0.25", "0.5"):
            sh(["convergence", "--case", str(cid), "--alpha", alpha,
                "--N", n_fix, "--M", "20,40,80", "--method", "both",
                "--out", str(out / f"space_case{cid}_alpha{alpha}.csv")])
    print(f"all tables written to {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
