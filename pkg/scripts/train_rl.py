"""Train the Gaussian power controller and compare it with the constant-budget baseline."""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from keybudget.harness import ExperimentConfig, load_config, outage_counts
from keybudget.policies import const_budget_policy
from keybudget.rl import train_policy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-runs", type=int, default=2000)
    ap.add_argument("--out", default="out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = replace(cfg.trainer, seed=args.seed)
    policy, _ = train_policy(cfg.params, cfg.weights, trainer, out / "training_log.csv", out / "policy.txt")

    params = cfg.params
    rl = outage_counts(params, policy, cfg.campaign.seed, args.eval_runs)
    cb = outage_counts(params, const_budget_policy(params), cfg.campaign.seed, args.eval_runs)
    power = rl.power_sum.sum() / (args.eval_runs * params.horizon)
    print(f"theta = {np.round(policy.gp.theta, 3)}")
    print(f"alpha({params.horizon}): RL {rl.alpha[-1]:.4f}, const budget {cb.alpha[-1]:.4f}")
    print(f"RL mean power {10 * np.log10(power):.2f} dB")


if __name__ == "__main__":
    main()
