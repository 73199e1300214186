"""Run the shipped scan configs one after another and print each summary line.

Usage: python3 scripts/run_scans.py [--out results] [--workers W] [axis ...]
"""

import argparse
import sys
from pathlib import Path

from pgd_lab.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SCANS = {"n": "scan_n.toml", "h": "scan_h.toml", "k": "scan_k.toml", "m": "scan_m.toml"}


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("axes", nargs="*", help="any of h, k, m, n (default: all)")
    p.add_argument("--out", default="results")
    p.add_argument("--workers", default=None)
    args = p.parse_args(argv)
    bad = sorted(set(args.axes) - set(SCANS))
    if bad:
        p.error(f"unknown axes {bad}; choose from {sorted(SCANS)}")
    args.axes = args.axes or sorted(SCANS)
    return args


if __name__ == "__main__":
    args = parse_args()
    status = 0
    for axis in args.axes:
        argv = ["scan", "--config", str(CONFIGS / SCANS[axis]), "--out", args.out]
        if args.workers:
            argv += ["--workers", args.workers]
        print(f"== scan {axis}", flush=True)
        status = max(status, main(argv))
    sys.exit(status)
