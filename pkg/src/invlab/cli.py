"""Command-line entry point: ``invlab <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config
from .errors import ConfigurationError
from .harness import gen_dataset, run_compare, run_edit, run_propcheck, run_similarity


def _csv_list(cast):
    def parse(text: str):
        try:
            return tuple(cast(x) for x in text.split(",") if x.strip())
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--steps", type=_csv_list(int), help="comma-separated plan sizes")
    common.add_argument("--w", type=_csv_list(float), help="comma-separated guidance scales")
    common.add_argument("--methods", type=_csv_list(str.strip),
                        help="comma-separated: ddim_cfg, null_text, negative_prompt")
    common.add_argument("--trials", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="invlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-dataset", parents=[common], help="write dataset.txt")
    sub.add_parser("compare", parents=[common], help="reconstruction benchmark -> runs.csv")
    sub.add_parser("propcheck", parents=[common], help="identity and gap checks -> propcheck.csv")
    sub.add_parser("similarity", parents=[common], help="per-step similarity -> similarity.csv")
    sub.add_parser("edit", parents=[common], help="class edits -> edits.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config, seed=args.seed, steps=args.steps, w=args.w,
                             methods=args.methods, trials=args.trials, out=args.out)
    except (ConfigurationError, ValueError) as exc:
        print(f"invlab: {exc}", file=sys.stderr)
        return 2

    out = Path(config.out)
    if args.command == "gen-dataset":
        out.mkdir(parents=True, exist_ok=True)
        spec = config.dataset
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        gen_dataset(replace(spec, path=None), out / "dataset.txt")
        return 0
    if args.command == "propcheck":
        rows = run_propcheck(config)
        failed = [r for r in rows if not r[-1]]
        for r in failed:
            print(f"propcheck failed: {r[0]} {r[1]} measured={r[2]}", file=sys.stderr)
        return 0
    runner = {"compare": run_compare, "similarity": run_similarity, "edit": run_edit}
    _, failures = runner[args.command](config)
    if failures:
        print(f"invlab: {len(failures)} run(s) failed, see {out / 'errors.csv'}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
