"""Per-step noise gaps and embedding similarity after null-text inversion.

Writes similarity.csv (long format) and prints the step-averaged series.

    python3 scripts/similarity.py --trials 50 --out results/similarity
"""

import argparse
import csv
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from invlab.config import load_config
from invlab.harness import run_similarity


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--out", default="results/similarity")
    args = p.parse_args()

    cfg = replace(load_config(args.config), steps=(args.steps,), trials=args.trials,
                  out=args.out)
    run_similarity(cfg)
    series = defaultdict(list)
    with open(Path(args.out) / "similarity.csv") as f:
        for r in csv.DictReader(f):
            series[r["series"]].append(float(r["value"]))
    for name, values in series.items():
        print(f"{name:<20} mean {np.mean(values):.4g}")


if __name__ == "__main__":
    main()
