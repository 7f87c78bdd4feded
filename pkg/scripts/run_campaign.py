"""Run one MC campaign from an INI config and print the headline numbers."""

import argparse
import logging
from pathlib import Path

import numpy as np

from keybudget.harness import ExperimentConfig, load_config, run_campaign


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="INI file (defaults if omitted)")
    ap.add_argument("--runs", type=int)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="out")
    ap.add_argument("--window", type=int, nargs=2, default=(1500, 2000), help="slot range for steady-state averages")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {"workers": args.workers, "out": args.out}
    if args.runs:
        over["runs"] = args.runs
    cfg = cfg.with_overrides(**over)
    rep = run_campaign(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out / "campaign.csv")

    lo, hi = args.window
    hi = min(hi, rep.horizon)
    win = slice(lo, hi + 1)
    power = 10 * np.log10(np.mean(rep["mean_power_linear"][win]))
    print(f"policy {cfg.policy}")
    print(f"t in [{lo}, {hi}]: mean power {power:.2f} dB, mean budget {np.mean(rep['mean_budget'][win]):.1f} bit, "
          f"alpha {np.mean(rep['alpha'][win]):.4f}")
    print(f"alpha({rep.horizon}) = {rep['alpha'][-1]:.4f}, ruined fraction {rep['ruin_fraction'][-1]:.4f}")
    for k, v in rep.summary.items():
        print(f"{k} = {v:.6g}")


if __name__ == "__main__":
    main()
