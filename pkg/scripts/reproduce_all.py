"""Write the CSV series behind every figure into one directory."""

import argparse
import logging
import time

from keybudget.harness import FIGURES, ExperimentConfig, load_config, reproduce_figures


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="INI file; set [policy] kind = rl and path to include a trained policy")
    ap.add_argument("--runs", type=int)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="out/figures")
    ap.add_argument("--only", nargs="*", choices=FIGURES)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {"workers": args.workers, "out": args.out}
    if args.runs:
        over["runs"] = args.runs
    cfg = cfg.with_overrides(**over)
    for fig in args.only or FIGURES:
        t0 = time.perf_counter()
        for path in reproduce_figures(fig, cfg):
            print(f"{fig}: wrote {path} ({time.perf_counter() - t0:.1f} s)")


if __name__ == "__main__":
    main()
