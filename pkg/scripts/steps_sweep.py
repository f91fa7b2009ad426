"""Reconstruction error and time against the number of sampling steps.

    python3 scripts/steps_sweep.py --trials 50 --out results/sweep
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
    p.add_argument("--steps", default="20,50,100,200")
    p.add_argument("--methods", default="negative_prompt,null_text")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--out", default="results/sweep")
    args = p.parse_args()

    cfg = replace(load_config(args.config), out=args.out, trials=args.trials,
                  steps=tuple(int(s) for s in args.steps.split(",")),
                  methods=tuple(args.methods.split(",")))
    run_compare(cfg)
    with open(Path(args.out) / "runs.csv") as f:
        rows = list(csv.DictReader(f))
    for method in cfg.methods:
        print(method.value)
        for N in cfg.steps:
            sel = [r for r in rows if r["method"] == method.value and int(r["steps"]) == N]
            mse = np.median([float(r["mse"]) for r in sel])
            ms = np.median([float(r["wall_ms"]) for r in sel])
            print(f"  N={N:<4} median mse {mse:.4g}  median wall {ms:.1f} ms")


if __name__ == "__main__":
    main()
