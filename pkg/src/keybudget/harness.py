"""Experiment driver: configuration, MC campaigns, power sweeps and figure series.

Configuration files are INI-style with four sections; every power-like key in
``[system]`` and ``[policy]`` is in dB and carries a ``_db`` suffix. See the
README for the key list.

Runs are split into fixed-size blocks of consecutive run indices. Blocks can be
executed in any order on any number of worker processes; results are merged in
block order, so every output is independent of the worker count.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .budget import simulate_block
from .errors import CapTooSmallError, ConfigError
from .model import SystemParams, db_to_linear, linear_to_db
from .policies import ConstantPolicy, PowerPolicy, policy_from_descriptor
from .resilience import ResilienceConfig, alert_outage_prob, bounds_series
from .rl.env import RewardWeights
from .rl.trainer import TrainerConfig
from .ruin import RuinGridConfig, critical_probability, expected_usage, ruin_curve, ultimate_ruin

log = logging.getLogger(__name__)

QUANTILES = (3, 10, 25, 30, 40, 60, 70, 75, 90, 97)
FIGURES = ("fig8", "fig9", "fig10", "fig11", "fig12", "fig13")

_SYSTEM_KEYS = {
    "mean_gain_bob_db": ("mean_gain_bob", True),
    "mean_gain_eve_db": ("mean_gain_eve", True),
    "p_tx": ("p_tx", False),
    "msg_len": ("msg_len", False),
    "initial_budget": ("initial_budget", False),
    "eps_tilde": ("eps_tilde", False),
    "alert_mean": ("alert_mean", False),
    "alert_kind": ("alert_kind", False),
    "p_max_db": ("p_max", True),
    "horizon": ("horizon", False),
}
_POLICY_KEYS = {"kind", "power_db", "w", "path"}


@dataclass(frozen=True)
class CampaignSettings:
    runs: int = 2000
    seed: int = 0
    workers: int = 1
    out: str = "out"
    block_size: int = 250
    strict_alert: bool = False
    cache: bool = True
    t_eval: int = 200
    alpha_target: float = 0.1
    sweep_powers_db: tuple = (4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 12.0, 14.0)
    grid_step: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    params: SystemParams = field(default_factory=SystemParams)
    policy: dict = field(default_factory=lambda: {"kind": "constant", "power_db": 10.0})
    campaign: CampaignSettings = field(default_factory=CampaignSettings)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        c = self.campaign
        if c.runs < 1:
            raise ConfigError("runs must be >= 1")
        if c.workers < 1:
            raise ConfigError("workers must be >= 1")
        if c.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        if not 0 < c.alpha_target < 1:
            raise ConfigError("alpha_target must lie in (0, 1)")
        if not 0 <= c.t_eval:
            raise ConfigError("t_eval must be >= 0")
        kind = self.policy.get("kind")
        if kind not in ("constant", "max_power", "const_budget", "adaptive", "rl"):
            raise ConfigError(f"unknown policy kind {kind!r}")
        if kind == "constant" and "power_db" not in self.policy:
            raise ConfigError("constant policy needs power_db")
        if kind == "rl" and "path" not in self.policy:
            raise ConfigError("rl policy needs path")

    def with_overrides(self, **campaign) -> "ExperimentConfig":
        return replace(self, campaign=replace(self.campaign, **campaign))

    def canonical(self) -> dict:
        """Everything that affects results; excludes worker count and output dir."""
        camp = asdict(self.campaign)
        camp.pop("workers")
        camp.pop("out")
        sp = {f.name: getattr(self.params, f.name) for f in fields(self.params) if f.init}
        return {
            "system": sp,
            "policy": dict(sorted(self.policy.items())),
            "campaign": camp,
            "trainer": asdict(self.trainer),
            "weights": asdict(self.weights),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_bool(section, key, raw) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")


def _typed(section, key, raw, kind):
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def load_config(path) -> ExperimentConfig:
    """Parse an INI configuration file; raises :class:`ConfigError` on bad input."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_parser(cp)


def config_from_string(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return config_from_parser(cp)


def config_from_parser(cp: configparser.ConfigParser) -> ExperimentConfig:
    unknown = set(cp.sections()) - {"system", "policy", "campaign", "rl"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")

    sys_kw = {}
    if cp.has_section("system"):
        for key, raw in cp.items("system"):
            if key not in _SYSTEM_KEYS:
                raise ConfigError(f"[system] unknown key {key!r}")
            name, is_db = _SYSTEM_KEYS[key]
            if name == "alert_kind":
                sys_kw[name] = raw.strip()
            elif name == "horizon":
                sys_kw[name] = _typed("system", key, raw, int)
            else:
                v = _typed("system", key, raw, float)
                sys_kw[name] = db_to_linear(v) if is_db else v
    try:
        params = SystemParams(**sys_kw)
    except ValueError as exc:
        raise ConfigError(f"[system] {exc}") from exc

    policy = {"kind": "constant", "power_db": 10.0}
    if cp.has_section("policy"):
        policy = {}
        for key, raw in cp.items("policy"):
            if key not in _POLICY_KEYS:
                raise ConfigError(f"[policy] unknown key {key!r}")
            policy[key] = raw.strip() if key in ("kind", "path") else _typed("policy", key, raw, float)
        policy.setdefault("kind", "constant")
        if policy["kind"] == "adaptive":
            policy.setdefault("w", 0.002)
            if not policy["w"] > 0:
                raise ConfigError("[policy] w must be positive")
        if "power_db" in policy and db_to_linear(policy["power_db"]) > params.p_max * (1 + 1e-12):
            raise ConfigError("[policy] power_db exceeds p_max_db")

    camp_kw = {}
    if cp.has_section("campaign"):
        types = {f.name: f.type for f in fields(CampaignSettings)}
        for key, raw in cp.items("campaign"):
            if key not in types:
                raise ConfigError(f"[campaign] unknown key {key!r}")
            if key in ("strict_alert", "cache"):
                camp_kw[key] = _parse_bool("campaign", key, raw)
            elif key == "out":
                camp_kw[key] = raw.strip()
            elif key == "sweep_powers_db":
                camp_kw[key] = tuple(_typed("campaign", key, x, float) for x in raw.split(",") if x.strip())
            elif key in ("alpha_target", "grid_step"):
                camp_kw[key] = _typed("campaign", key, raw, float)
            else:
                camp_kw[key] = _typed("campaign", key, raw, int)
    campaign = CampaignSettings(**camp_kw)

    trainer_kw, weight_kw = {}, {}
    if cp.has_section("rl"):
        tnames = {f.name: f.type for f in fields(TrainerConfig)}
        for key, raw in cp.items("rl"):
            if key in ("w1", "w2", "w3", "w4", "message_slot_reward"):
                weight_kw[key] = _typed("rl", key, raw, float)
            elif key in tnames:
                is_int = key in ("iterations", "episodes", "horizon", "seed", "collapse_patience")
                trainer_kw[key] = _typed("rl", key, raw, int if is_int else float)
            else:
                raise ConfigError(f"[rl] unknown key {key!r}")
    try:
        trainer = TrainerConfig(**trainer_kw)
        weights = RewardWeights(**weight_kw)
    except ValueError as exc:
        raise ConfigError(f"[rl] {exc}") from exc
    return ExperimentConfig(params, policy, campaign, trainer, weights)


def build_policy(cfg: ExperimentConfig) -> PowerPolicy:
    try:
        return policy_from_descriptor(cfg.policy, cfg.params, cache=cfg.campaign.cache)
    except (OSError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot build policy {cfg.policy}: {exc}") from exc


# ---------------------------------------------------------------------------
# Campaign execution
# ---------------------------------------------------------------------------

def _blocks(runs: int, block_size: int):
    return [np.arange(s, min(s + block_size, runs)) for s in range(0, runs, block_size)]


def _run_block(job):
    params, policy, seed, idx, horizon, res_cfg, mode = job
    res = simulate_block(params, policy, seed, idx, horizon)
    alive = res.alive
    if mode == "full":
        return res.budgets, alive, res.power
    # streaming: per-slot counts only
    eps = alert_outage_prob(res.budgets, alive, res_cfg)
    return (
        np.sum(eps > res_cfg.eps_tilde, axis=0),
        np.sum(~alive, axis=0),
        np.sum(res.power, axis=0),
        idx.size,
    )


def _execute(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_run_block(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_block, jobs))


def simulate_matrix(params, policy, seed, runs, horizon=None, workers=1, block_size=250):
    """Budgets ``(runs, T+1)``, alive flags and powers ``(runs, T)`` in run-index order."""
    T = int(params.horizon if horizon is None else horizon)
    jobs = [(params, policy, seed, idx, T, None, "full") for idx in _blocks(runs, block_size)]
    out = _execute(jobs, workers)
    return (
        np.concatenate([o[0] for o in out]),
        np.concatenate([o[1] for o in out]),
        np.concatenate([o[2] for o in out]),
    )


@dataclass
class OutageCounts:
    """Per-slot integer counts over ``runs`` runs, t = 0..T."""

    runs: int
    outage: np.ndarray
    ruined: np.ndarray
    power_sum: np.ndarray  # t = 1..T

    @property
    def alpha(self) -> np.ndarray:
        return self.outage / self.runs

    @property
    def ruin_fraction(self) -> np.ndarray:
        return self.ruined / self.runs


def outage_counts(params, policy, seed, runs, horizon=None, strict=False, workers=1, block_size=1000) -> OutageCounts:
    """Streaming MC for large run counts; memory is O(block_size * horizon)."""
    T = int(params.horizon if horizon is None else horizon)
    res_cfg = ResilienceConfig.from_params(params, strict)
    jobs = [(params, policy, seed, idx, T, res_cfg, "counts") for idx in _blocks(runs, block_size)]
    out = _execute(jobs, workers)
    outage = np.zeros(T + 1, dtype=np.int64)
    ruined = np.zeros(T + 1, dtype=np.int64)
    psum = np.zeros(T)
    for o in out:
        outage += o[0]
        ruined += o[1]
        psum += o[2]
    return OutageCounts(runs, outage, ruined, psum)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

REPORT_COLUMNS = (
    ["t", "mean_power_linear", "mean_power_db", "mean_budget"]
    + [f"q{q:02d}" for q in QUANTILES]
    + ["alpha", "eps_mean", "alpha_lower_bound", "alpha_upper_bound", "psi_t", "ruin_fraction"]
)
SUMMARY_KEYS = ("psi_inf", "p_crit", "expected_usage", "b_eps")


@dataclass
class ResilienceReport:
    """Per-slot series for t = 0..T and a scalar summary.

    ``mean_budget`` and the quantiles use the budget absorbed at zero after
    ruin. ``psi_t`` is the grid ruin probability (constant powers only, NaN
    otherwise); ``ruin_fraction`` is the MC estimate. Power is NaN at t = 0.
    """

    series: dict
    summary: dict
    provenance: dict

    @property
    def horizon(self) -> int:
        return len(self.series["t"]) - 1

    def __getitem__(self, key):
        return self.series[key]

    def quantile(self, q: int) -> np.ndarray:
        return self.series[f"q{q:02d}"]

    def to_csv(self, path) -> None:
        write_csv(path, REPORT_COLUMNS, [self.series[c] for c in REPORT_COLUMNS], self.provenance, self.summary)

    @classmethod
    def from_csv(cls, path) -> "ResilienceReport":
        meta, header, cols = read_csv(path)
        summary = {k: float(meta.pop(k)) for k in SUMMARY_KEYS if k in meta}
        series = {h: c for h, c in zip(header, cols)}
        series["t"] = series["t"].astype(np.int64)
        return cls(series, summary, meta)

    def equals(self, other: "ResilienceReport") -> bool:
        if set(self.series) != set(other.series) or self.provenance != other.provenance:
            return False
        if any(not _same(self.summary[k], other.summary[k]) for k in self.summary):
            return False
        return all(np.array_equal(self.series[k], other.series[k], equal_nan=True) for k in self.series)


def _same(a, b):
    return (math.isnan(a) and math.isnan(b)) or a == b


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_csv(path, header, columns, provenance: dict, summary: Optional[dict] = None) -> None:
    """CSV with a ``# key=value ...`` provenance line (plus optional summary line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in provenance.items()) + "\n")
        if summary:
            fh.write("# " + " ".join(f"{k}={_fmt(v)}" for k, v in summary.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    """Inverse of :func:`write_csv`: ``(meta, header, columns)``; meta merges all comment lines."""
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            for tok in line[1:].split():
                k, _, v = tok.partition("=")
                meta[k] = v
        elif line:
            body.append(line)
    rows = list(csv.reader(body))
    header = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]]) if len(rows) > 1 else np.empty((0, len(header)))
    return meta, header, [data[:, j] for j in range(len(header))]


def provenance(cfg: ExperimentConfig, **extra) -> dict:
    d = {"config_hash": cfg.config_hash(), "seed": cfg.campaign.seed}
    d.update(extra)
    return {k: str(v) for k, v in d.items()}


def _constant_power(policy: PowerPolicy) -> Optional[float]:
    return policy.power if isinstance(policy, ConstantPolicy) else None


def _ultimate_or_nan(params, power, grid_cfg) -> float:
    # near zero drift the grid would need millions of nodes
    try:
        return ultimate_ruin(params, power, grid_cfg)[0]
    except CapTooSmallError as exc:
        log.warning("psi_inf not computed at %.4g dB: %s", float(linear_to_db(power)), exc)
        return math.nan


def build_report(cfg, budgets, alive, power, policy) -> ResilienceReport:
    params = cfg.params
    res_cfg = ResilienceConfig.from_params(params, cfg.campaign.strict_alert)
    T = budgets.shape[1] - 1
    eff = np.where(alive, budgets, 0.0)
    eps = alert_outage_prob(budgets, alive, res_cfg)
    mp = np.concatenate([[np.nan], power.mean(axis=0)])
    series = {
        "t": np.arange(T + 1),
        "mean_power_linear": mp,
        "mean_power_db": linear_to_db(mp),
        "mean_budget": eff.mean(axis=0),
    }
    qs = np.quantile(eff, np.array(QUANTILES) / 100.0, axis=0)
    for q, row in zip(QUANTILES, qs):
        series[f"q{q:02d}"] = row
    series["alpha"] = np.mean(eps > res_cfg.eps_tilde, axis=0)
    series["eps_mean"] = eps.mean(axis=0)
    series["ruin_fraction"] = np.mean(~alive, axis=0)

    p_const = _constant_power(policy)
    summary = {"psi_inf": math.nan, "p_crit": math.nan, "expected_usage": math.nan, "b_eps": res_cfg.min_budget}
    psi_t = np.full(T + 1, np.nan)
    if p_const is not None:
        grid_cfg = RuinGridConfig(step=cfg.campaign.grid_step)
        psi_t, _ = ruin_curve(params, p_const, T, grid_cfg)
        summary["psi_inf"] = _ultimate_or_nan(params, p_const, grid_cfg)
        summary["p_crit"] = critical_probability(params, p_const)
        summary["expected_usage"] = expected_usage(params, p_const)
    series["psi_t"] = psi_t
    lower = np.full(T + 1, np.nan)
    upper = np.full(T + 1, np.nan)
    if p_const is not None and not cfg.campaign.strict_alert:
        # F_S(b0 - b_eps) = Pr(B(t) >= b_eps) for the unabsorbed walk
        f_s = np.mean(budgets >= res_cfg.min_budget, axis=0)
        lower, upper = bounds_series(f_s, psi_t)
    series["alpha_lower_bound"] = lower
    series["alpha_upper_bound"] = upper
    prov = provenance(cfg, runs=cfg.campaign.runs, policy=cfg.policy["kind"])
    return ResilienceReport(series, summary, prov)


def run_campaign(cfg: ExperimentConfig, policy: Optional[PowerPolicy] = None) -> ResilienceReport:
    """Simulate runs 0..runs-1 of the configured policy and aggregate."""
    policy = policy or build_policy(cfg)
    c = cfg.campaign
    budgets, alive, power = simulate_matrix(cfg.params, policy, c.seed, c.runs, None, c.workers, c.block_size)
    return build_report(cfg, budgets, alive, power, policy)


# ---------------------------------------------------------------------------
# Power sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepTable:
    power_db: np.ndarray
    alpha_t_eval: np.ndarray
    psi_t_eval: np.ndarray
    psi_inf: np.ndarray
    p_crit: np.ndarray
    t_eval: int
    alpha_target: float
    min_power_db: float  # smallest power with psi_inf (long-run alpha) <= target
    min_power_db_t_eval: float  # same on alpha(t_eval)

    COLUMNS = ("power_db", "alpha_t_eval", "psi_t_eval", "psi_inf", "p_crit")

    def to_csv(self, path, prov: dict) -> None:
        summary = {
            "t_eval": self.t_eval,
            "alpha_target": self.alpha_target,
            "min_power_db": self.min_power_db,
            "min_power_db_t_eval": self.min_power_db_t_eval,
        }
        write_csv(path, self.COLUMNS, [getattr(self, c) for c in self.COLUMNS], prov, summary)


def crossing(x, y, target: float) -> float:
    """Smallest x where the piecewise-linear y(x) drops to ``target`` or below.

    ``x`` ascending. NaN if y never reaches the target; ``x[0]`` if it starts
    there.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.flatnonzero(y <= target)
    if ok.size == 0:
        return math.nan
    j = int(ok[0])
    if j == 0:
        return float(x[0])
    x0, x1, y0, y1 = x[j - 1], x[j], y[j - 1], y[j]
    return float(x0 + (target - y0) * (x1 - x0) / (y1 - y0))


def sweep_power(cfg: ExperimentConfig, powers_db=None, t_eval: Optional[int] = None) -> SweepTable:
    """alpha(t_eval) by MC (shared streams across powers), psi from the grid."""
    c = cfg.campaign
    powers_db = np.sort(np.asarray(c.sweep_powers_db if powers_db is None else powers_db, dtype=float))
    t_eval = c.t_eval if t_eval is None else int(t_eval)
    params = cfg.params
    grid_cfg = RuinGridConfig(step=c.grid_step)
    rows = []
    for pdb in powers_db:
        power = db_to_linear(pdb)
        if not 0 < power <= params.p_max * (1 + 1e-12):
            raise ConfigError(f"sweep power {pdb} dB outside (0, P_max]")
        power = min(power, params.p_max)
        pol = ConstantPolicy(power, params.p_max)
        counts = outage_counts(params, pol, c.seed, c.runs, max(t_eval, 1), c.strict_alert, c.workers)
        curve, _ = ruin_curve(params, power, max(t_eval, 1), grid_cfg)
        psi_inf = _ultimate_or_nan(params, power, grid_cfg)
        rows.append((counts.alpha[t_eval], curve[t_eval], psi_inf, critical_probability(params, power)))
    a, pt, pinf, pc = (np.array(col) for col in zip(*rows))
    return SweepTable(
        powers_db, a, pt, pinf, pc, t_eval, c.alpha_target,
        crossing(powers_db, pinf, c.alpha_target), crossing(powers_db, a, c.alpha_target),
    )


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _scheme_descriptors(cfg: ExperimentConfig) -> dict:
    d = {
        "max_power": {"kind": "max_power"},
        "p10db": {"kind": "constant", "power_db": 10.0},
        "const_budget": {"kind": "const_budget"},
        "adaptive": {"kind": "adaptive", "w": float(cfg.policy.get("w", 0.002))},
    }
    if cfg.policy.get("kind") == "rl":
        d["rl"] = dict(cfg.policy)
    return d


def reproduce_figures(selector: str, cfg: ExperimentConfig, out_dir=None) -> list[Path]:
    """Write the CSV series behind one figure; returns the written paths.

    fig8: t, alpha, alpha_lower_bound, alpha_upper_bound, psi_t, psi_inf (constant 10 dB)
    fig9: power sweep table
    fig10/11/12: t plus one column per scheme (mean power dB / mean budget / alpha)
    fig13: t, mean_budget and budget quantiles for the constant-budget scheme
    """
    if selector not in FIGURES:
        raise ConfigError(f"unknown figure {selector!r}; choose from {', '.join(FIGURES)}")
    out = Path(out_dir or cfg.campaign.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{selector}.csv"

    if selector == "fig8":
        c8 = replace(cfg, policy={"kind": "constant", "power_db": 10.0})
        rep = run_campaign(c8)
        T = rep.horizon
        cols = ["t", "alpha", "alpha_lower_bound", "alpha_upper_bound", "psi_t"]
        data = [rep[k] for k in cols] + [np.full(T + 1, rep.summary["psi_inf"])]
        write_csv(path, cols + ["psi_inf"], data, provenance(c8, figure=selector))
        return [path]
    if selector == "fig9":
        table = sweep_power(cfg)
        table.to_csv(path, provenance(cfg, figure=selector))
        return [path]
    if selector == "fig13":
        c13 = replace(cfg, policy={"kind": "const_budget"})
        rep = run_campaign(c13)
        cols = ["t", "mean_budget"] + [f"q{q:02d}" for q in QUANTILES]
        write_csv(path, cols, [rep[k] for k in cols], provenance(c13, figure=selector))
        return [path]

    column = {"fig10": "mean_power_db", "fig11": "mean_budget", "fig12": "alpha"}[selector]
    names, data = [], []
    for name, desc in _scheme_descriptors(cfg).items():
        rep = run_campaign(replace(cfg, policy=desc))
        names.append(name)
        data.append(rep[column])
    t = np.arange(cfg.params.horizon + 1)
    write_csv(path, ["t"] + names, [t] + data, provenance(cfg, figure=selector, series=column))
    return [path]


def default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))
