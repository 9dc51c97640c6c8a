#!/usr/bin/env python3
"""Sequential vs. parallel latency benchmark on synthetic data.

Thin wrapper around `ppn bench`; see `ppn bench --help` for the full
set of config keys.
"""

import argparse
import sys

from ppn.cli import main


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--base", type=int, default=16)
    p.add_argument("--out", default="out/bench")
    return p.parse_args()


if __name__ == "__main__":
    args = parse_args()
    sys.exit(main([
        "bench", "--out", args.out,
        f"runs={args.runs}", f"depth={args.depth}", f"base={args.base}",
    ]))
