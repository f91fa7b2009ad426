"""Reconstruction quality and speed of the three methods at one plan size.

    python3 scripts/reconstruction_table.py --steps 50 --trials 50 --out results/table
"""

import argparse
import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from invlab.config import load_config
from invlab.harness import run_compare


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--w", type=float, default=7.5)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/table")
    args = p.parse_args()

    cfg = replace(load_config(args.config), steps=(args.steps,), w=(args.w,),
                  trials=args.trials, seed=args.seed, out=args.out)
    run_compare(cfg)
    with open(Path(args.out) / "runs.csv") as f:
        rows = list(csv.DictReader(f))
    print(f"{'method':<16} {'median mse':>11} {'psnr dB':>8} {'calls':>6} {'wall ms':>8}")
    for method in cfg.methods:
        sel = [r for r in rows if r["method"] == method.value]
        med = lambda key: np.median([float(r[key]) for r in sel])
        print(f"{method.value:<16} {med('mse'):>11.4g} {med('psnr_db'):>8.2f} "
              f"{med('model_calls'):>6.0f} {med('wall_ms'):>8.1f}")


if __name__ == "__main__":
    main()
