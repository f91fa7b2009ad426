"""Class edits: condition swap and partial-noise edits toward another class.

    python3 scripts/editing.py --t0 0.5 --trials 50 --out results/edits
"""

import argparse
import csv
from dataclasses import replace
from pathlib import Path

from invlab.config import load_config
from invlab.harness import run_edit


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--w", type=float, default=7.5)
    p.add_argument("--t0", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--out", default="results/edits")
    args = p.parse_args()

    base = load_config(args.config)
    cfg = replace(base, steps=(args.steps,), w=(args.w,), trials=args.trials, out=args.out,
                  edit=replace(base.edit, t0_ratio=args.t0))
    run_edit(cfg)
    moved = {}
    with open(Path(args.out) / "edits.csv") as f:
        for r in csv.DictReader(f):
            key = (r["method"], r["mode"])
            hit = float(r["cluster_distance_target"]) < float(r["cluster_distance_original"])
            done, total = moved.get(key, (0, 0))
            moved[key] = (done + hit, total + 1)
    for (method, mode), (done, total) in moved.items():
        print(f"{method:<15} {mode:<13} closer to target in {done}/{total}")


if __name__ == "__main__":
    main()
