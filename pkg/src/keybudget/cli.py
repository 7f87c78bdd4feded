"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConvergenceError, TrainingDivergedError
from .harness import (
    FIGURES,
    ExperimentConfig,
    build_policy,
    load_config,
    provenance,
    reproduce_figures,
    run_campaign,
    sweep_power,
    write_csv,
)
from .model import db_to_linear, linear_to_db
from .policies import ConstantPolicy
from .resilience import ResilienceConfig
from .rl.trainer import train_policy
from .ruin import RuinGridConfig, critical_probability, expected_usage, ruin_curve, ultimate_ruin

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("keybudget")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.runs is not None:
        over["runs"] = args.runs
    if args.workers is not None:
        over["workers"] = args.workers
    if args.out is not None:
        over["out"] = args.out
    try:
        return cfg.with_overrides(**over) if over else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _out(cfg) -> Path:
    p = Path(cfg.campaign.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _constant_power(cfg) -> float:
    pol = build_policy(cfg)
    if not isinstance(pol, ConstantPolicy):
        raise ConfigError(f"this command needs a constant-power policy, got {cfg.policy['kind']!r}")
    return pol.power


def cmd_simulate(args) -> int:
    cfg = _config(args)
    rep = run_campaign(cfg)
    path = _out(cfg) / "campaign.csv"
    rep.to_csv(path)
    s = rep.summary
    print(f"wrote {path}")
    print(f"alpha({rep.horizon}) = {rep['alpha'][-1]:.4f}  mean budget = {rep['mean_budget'][-1]:.2f} bit")
    print("  ".join(f"{k}={v:.6g}" for k, v in s.items()))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    powers = [float(x) for x in args.powers.split(",")] if args.powers else None
    table = sweep_power(cfg, powers, args.t_eval)
    path = _out(cfg) / "sweep_power.csv"
    table.to_csv(path, provenance(cfg))
    print(f"wrote {path}")
    print(f"min power for alpha <= {table.alpha_target}: {table.min_power_db:.3f} dB (long run), "
          f"{table.min_power_db_t_eval:.3f} dB (t = {table.t_eval})")
    return EXIT_OK


def cmd_ruin(args) -> int:
    cfg = _config(args)
    power = _constant_power(cfg)
    grid_cfg = RuinGridConfig(step=cfg.campaign.grid_step)
    T = args.horizon if args.horizon is not None else cfg.params.horizon
    curve, grid = ruin_curve(cfg.params, power, T, grid_cfg)
    psi_inf, ugrid = ultimate_ruin(cfg.params, power, grid_cfg)
    out = _out(cfg)
    prov = provenance(cfg, power_db=f"{float(linear_to_db(power)):.6g}")
    write_csv(out / "ruin_curve.csv", ["t", "psi_t"], [np.arange(T + 1), curve], prov, {"psi_inf": psi_inf})
    if ugrid is not None:
        write_csv(out / "ruin_grid.csv", ["budget_bits", "psi_inf"], [ugrid.budget_axis, ugrid.psi], prov)
    print(f"psi({T}) = {curve[-1]:.6f}  psi_inf = {psi_inf:.6f}")
    return EXIT_OK


def cmd_pcrit(args) -> int:
    cfg = _config(args)
    if args.powers:
        powers_db = [float(x) for x in args.powers.split(",")]
    else:
        powers_db = [float(linear_to_db(_constant_power(cfg)))]
    rows = []
    for pdb in powers_db:
        p = db_to_linear(pdb)
        rows.append((pdb, critical_probability(cfg.params, p), expected_usage(cfg.params, p)))
        print(f"P = {pdb:g} dB: p_crit = {rows[-1][1]:.6f}  E[Z] = {rows[-1][2]:.6f} bit/slot")
    cols = [np.array(c) for c in zip(*rows)]
    write_csv(_out(cfg) / "pcrit.csv", ["power_db", "p_crit", "expected_usage"], cols, provenance(cfg))
    return EXIT_OK


def cmd_min_budget(args) -> int:
    cfg = _config(args)
    b = ResilienceConfig.from_params(cfg.params, cfg.campaign.strict_alert).min_budget
    print(f"b_eps = {b:g} bit")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(cfg)
    trainer = cfg.trainer if args.seed is None else replace(cfg.trainer, seed=args.seed)
    pol, hist = train_policy(cfg.params, cfg.weights, trainer, out / "training_log.csv", out / "policy.txt")
    last = hist[-1] if hist else None
    print(f"wrote {out / 'policy.txt'} and {out / 'training_log.csv'}")
    if last is not None:
        print(f"final: return/slot {last.mean_return:.4f}  power {last.mean_power_db:.2f} dB  alpha {last.alpha_estimate:.3f}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _config(args)
    for p in reproduce_figures(args.figure, cfg):
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--runs", type=int, help="number of MC runs")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="keybudget", description="Secret-key budget resilience experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one MC campaign").set_defaults(fn=cmd_simulate)
    sp = sub.add_parser("sweep-power", parents=[common], help="alpha and ruin across constant powers")
    sp.add_argument("--powers", help="comma-separated dB values (default from config)")
    sp.add_argument("--t-eval", type=int, default=None)
    sp.set_defaults(fn=cmd_sweep)
    rp = sub.add_parser("ruin", parents=[common], help="finite-time and ultimate ruin on the grid")
    rp.add_argument("--horizon", type=int, default=None)
    rp.set_defaults(fn=cmd_ruin)
    pp = sub.add_parser("pcrit", parents=[common], help="critical message probability")
    pp.add_argument("--powers", help="comma-separated dB values (default: the policy power)")
    pp.set_defaults(fn=cmd_pcrit)
    sub.add_parser("min-budget", parents=[common], help="alert budget threshold").set_defaults(fn=cmd_min_budget)
    sub.add_parser("train-rl", parents=[common], help="train the RL power controller").set_defaults(fn=cmd_train)
    fp = sub.add_parser("reproduce", parents=[common], help="write the CSV series of one figure")
    fp.add_argument("figure", choices=FIGURES)
    fp.set_defaults(fn=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, TrainingDivergedError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
