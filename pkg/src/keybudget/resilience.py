"""Alert outage, resilience outage and the Frechet bounds on the latter."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import AlertLaw, SystemParams


@dataclass(frozen=True)
class ResilienceConfig:
    eps_tilde: float
    alert: AlertLaw
    msg_len: float
    strict: bool = False
    min_budget: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.eps_tilde < 1.0:
            raise ValueError("eps_tilde must lie in (0, 1)")
        object.__setattr__(self, "min_budget", self.alert.quantile(1.0 - self.eps_tilde) * self.msg_len)

    @classmethod
    def from_params(cls, params: SystemParams, strict: bool = False) -> "ResilienceConfig":
        return cls(params.eps_tilde, params.alert, params.msg_len, strict)


@dataclass(frozen=True)
class BoundPair:
    lower: float
    upper: float
    t: int

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.upper <= 1.0):
            raise ValueError(f"invalid bound pair {self.lower}, {self.upper}")


def min_budget(cfg: ResilienceConfig) -> float:
    """b_eps = L * F_T^{-1}(1 - eps~)."""
    return cfg.min_budget


_K_CLIP = 4000  # Pr(T > k) has long underflowed to 0 here for any practical mean


class _TailTable:
    """Cached Pr(T > k) for vectorised lookups."""

    def __init__(self, alert: AlertLaw):
        self.alert = alert
        self.table = np.array([1.0])

    def __call__(self, k):
        k = np.minimum(np.asarray(k, dtype=np.int64), _K_CLIP)
        kmax = int(k.max()) if k.size else 0
        if kmax >= self.table.size - 1:
            self.table = np.array([self.alert.sf(j) for j in range(-1, max(kmax + 1, 2 * self.table.size))])
        # table[0] holds k = -1
        return self.table[np.clip(k, -1, None) + 1]


_TAILS: dict[AlertLaw, _TailTable] = {}


def _tail(alert: AlertLaw) -> _TailTable:
    if alert not in _TAILS:
        _TAILS[alert] = _TailTable(alert)
    return _TAILS[alert]


def alert_outage_prob(budget, survived, cfg: ResilienceConfig):
    """epsilon(t) given the budget at alert entry and survival up to t.

    Default convention: outage iff ``T L > B``, i.e. ``Pr(T > floor(B/L))``.
    Strict convention: outage iff ``(T + 1) L >= B``.
    """
    b = np.asarray(budget, dtype=float)
    alive = np.asarray(survived, dtype=bool) & (b > 0)
    ratio = np.where(alive, b, 0.0) / cfg.msg_len
    if cfg.strict:
        k = np.ceil(ratio).astype(np.int64) - 2
    else:
        k = np.floor(ratio).astype(np.int64)
    eps = np.where(alive, _tail(cfg.alert)(k), 1.0)
    return eps[()] if eps.ndim == 0 else eps


def _as_matrices(trajectories):
    if isinstance(trajectories, tuple):
        budgets, alive = trajectories
        return np.asarray(budgets), np.asarray(alive, dtype=bool)
    budgets = np.stack([tr.budgets for tr in trajectories])
    return budgets, np.logical_and.accumulate(budgets > 0, axis=1)


def resilience_outage_mc(trajectories, cfg: ResilienceConfig) -> np.ndarray:
    """alpha(t) = Pr(eps(t) > eps~) as an MC fraction, t = 0..horizon.

    ``trajectories`` is a sequence of :class:`BudgetTrajectory` or a
    ``(budgets, alive)`` pair of ``(runs, horizon+1)`` arrays.
    """
    budgets, alive = _as_matrices(trajectories)
    eps = alert_outage_prob(budgets, alive, cfg)
    return np.mean(eps > cfg.eps_tilde, axis=0)


def outage_indicator(budgets, alive, cfg: ResilienceConfig):
    """Threshold form: below b_eps or already ruined (default convention only)."""
    return (np.asarray(budgets) < cfg.min_budget) | ~np.asarray(alive, dtype=bool)


def accumulated_usage_cdf(budgets, params: SystemParams, cfg: ResilienceConfig) -> np.ndarray:
    """Empirical F_{S(t)}(b0 - b_eps) per slot, with S(t) = b0 - B(t)."""
    s = params.initial_budget - np.asarray(budgets)
    return np.mean(s <= params.initial_budget - cfg.min_budget, axis=0)


def theorem1_bounds(f_s, psi, t: int = 0) -> BoundPair:
    """Frechet bounds on alpha(t) from F_S(b0 - b_eps) and psi_{b0}(t)."""
    f_s = float(np.clip(f_s, 0.0, 1.0))
    psi = float(np.clip(psi, 0.0, 1.0))
    lower = 1.0 - min(f_s, 1.0 - psi)
    upper = 1.0 - max(f_s - psi, 0.0)
    return BoundPair(lower, upper, t)


def bounds_series(f_s: Sequence[float], psi: Sequence[float]):
    f_s = np.clip(np.asarray(f_s, dtype=float), 0.0, 1.0)
    psi = np.clip(np.asarray(psi, dtype=float), 0.0, 1.0)
    return 1.0 - np.minimum(f_s, 1.0 - psi), 1.0 - np.maximum(f_s - psi, 0.0)


def write_alpha_csv(path, alpha, lower, upper, psi) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "alpha", "alpha_lower_bound", "alpha_upper_bound", "psi_t"])
        for t, row in enumerate(zip(alpha, lower, upper, psi)):
            w.writerow([t] + [repr(float(v)) if not math.isnan(v) else "nan" for v in row])
