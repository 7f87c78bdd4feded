"""Power-allocation policies.

A policy is a callable ``policy(t, budget, gain_bob, message) -> power`` that
accepts scalars or equally shaped arrays (one entry per MC run) and returns
powers in ``[0, P_max]``. ``descriptor()`` gives a serialisable
``{"kind": ..., ...}`` dict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import SystemParams, cond_expected_skg_rate, db_to_linear, expected_skg_rate, linear_to_db

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class PowerPolicy:
    kind = "abstract"

    def __init__(self, p_max: float):
        self.p_max = float(p_max)

    def __call__(self, t, budget, gain_bob, message):
        raise NotImplementedError

    def descriptor(self) -> dict:
        return {"kind": self.kind}


class ConstantPolicy(PowerPolicy):
    kind = "constant"

    def __init__(self, power: float, p_max: float, kind: str | None = None):
        super().__init__(p_max)
        if not 0.0 < power <= p_max:
            raise ValueError(f"constant power {power} outside (0, P_max={p_max}]")
        self.power = float(power)
        if kind is not None:
            self.kind = kind

    def __call__(self, t, budget, gain_bob, message):
        return np.full(np.shape(budget), self.power)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "power_db": float(linear_to_db(self.power))}


def constant_policy(power: float, p_max: float) -> ConstantPolicy:
    return ConstantPolicy(power, p_max)


def max_power_policy(params: SystemParams) -> ConstantPolicy:
    return ConstantPolicy(params.p_max, params.p_max, kind="max_power")


def const_budget_power(params: SystemParams, tol_db: float = 1e-4, lo_db: float = -40.0) -> float:
    """Constant power with E[R_SK] = L p / (1 - p), i.e. zero mean usage.

    Bisection in dB between ``lo_db`` and P_max.
    """
    p = params.p_tx
    if p == 0.0:
        return 0.0
    if p >= 1.0:
        raise ValueError("no finite key rate balances p = 1")
    target = params.msg_len * p / (1.0 - p)
    hi_db = float(linear_to_db(params.p_max))
    if expected_skg_rate(params, params.p_max) < target:
        raise ValueError(f"target rate {target:.4g} not achievable below P_max")

    def gap(db):
        return expected_skg_rate(params, db_to_linear(db)) - target

    lo, hi = lo_db, hi_db
    if gap(lo) > 0:
        return db_to_linear(lo)
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            hi = mid
        else:
            lo = mid
    return db_to_linear(0.5 * (lo + hi))


def const_budget_policy(params: SystemParams) -> ConstantPolicy:
    return ConstantPolicy(const_budget_power(params), params.p_max, kind="const_budget")


# ---------------------------------------------------------------------------
# Adaptive scheme
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdaptiveConfig:
    """Weight ``w`` of the power exponent and the argmax search settings."""

    w: float = 0.002
    grid_points: int = 64
    p_min: float = 1e-2
    rel_tol: float = 0.005
    cache: bool = True
    quantization: float = 0.01

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError("adaptive weight w must be positive")


def golden_section_max(f, lo, hi, tol: float):
    """Vectorised golden-section search for the maximiser of ``f`` on ``[lo, hi]``.

    ``lo``/``hi`` are arrays (one bracket per element) and ``f`` maps an array
    of abscissae to an array of values. Each bracket is shrunk until it is
    narrower than ``tol``, with its own iteration count, so an element's result
    does not depend on the other brackets in the batch. Returns the bracket
    midpoints.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    width = hi - lo
    n_each = np.zeros(lo.shape, dtype=np.int64)
    wide = width > tol
    n_each[wide] = np.ceil(np.log(tol / width[wide]) / math.log(INV_PHI)).astype(np.int64)
    n = int(n_each.max()) if n_each.size else 0
    if n == 0:
        return 0.5 * (lo + hi)
    c = hi - INV_PHI * (hi - lo)
    d = lo + INV_PHI * (hi - lo)
    fc = f(c)
    fd = f(d)
    for it in range(n):
        run = it < n_each
        left = fc > fd
        # left: keep [lo, d]; right: keep [c, hi]
        new_hi = np.where(left, d, hi)
        new_lo = np.where(left, lo, c)
        new_c = np.where(left, new_hi - INV_PHI * (new_hi - new_lo), d)
        new_d = np.where(left, c, new_lo + INV_PHI * (new_hi - new_lo))
        fnew = f(np.where(left, new_c, new_d))
        new_fc, new_fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
        lo, hi = np.where(run, new_lo, lo), np.where(run, new_hi, hi)
        c, d = np.where(run, new_c, c), np.where(run, new_d, d)
        fc, fd = np.where(run, new_fc, fc), np.where(run, new_fd, fd)
    return 0.5 * (lo + hi)


def _log_g(power, h, delta, w, lambda_eve):
    rate = cond_expected_skg_rate(power, h, lambda_eve)
    with np.errstate(divide="ignore"):
        return np.log(rate) - w * delta * np.log(power)


def argmax_g(h, delta_budget, cfg: AdaptiveConfig, params: SystemParams):
    """argmax over P in (0, P_max] of E[R_SK | h](P) / P^(w * delta_budget).

    Log-spaced grid over ``[p_min, P_max]`` followed by golden-section
    refinement (in log P) on the two cells around the best grid point.
    Vectorised over ``h`` and ``delta_budget``.
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    delta = np.atleast_1d(np.asarray(delta_budget, dtype=float))
    h, delta = np.broadcast_arrays(h, delta)
    lam = params.lambda_eve
    lg = np.linspace(math.log(cfg.p_min), math.log(params.p_max), cfg.grid_points)
    vals = _log_g(np.exp(lg)[None, :], h[:, None], delta[:, None], cfg.w, lam)
    k = np.argmax(vals, axis=1)
    best_grid = vals[np.arange(h.size), k]
    lo = lg[np.maximum(k - 1, 0)]
    hi = lg[np.minimum(k + 1, cfg.grid_points - 1)]

    def f(x):
        return _log_g(np.exp(x), h, delta, cfg.w, lam)

    x = golden_section_max(f, lo, hi, math.log1p(cfg.rel_tol))
    refined = f(x)
    out = np.where(refined >= best_grid, np.exp(x), np.exp(lg[k]))
    # g identically zero (no key rate at any power): fall back to P_max
    out = np.where(np.isfinite(best_grid), out, params.p_max)
    return np.clip(out, 0.0, params.p_max)


class AdaptivePolicy(PowerPolicy):
    """P_max while the budget is at or below b_eps, else the argmax of g.

    With ``cfg.cache`` the argmax is evaluated at ``h`` and ``B - b_eps``
    rounded to a 1% relative lattice and memoised. The value for a lattice
    point does not depend on evaluation order, so cached runs stay
    deterministic across processes.
    """

    kind = "adaptive"

    def __init__(self, cfg: AdaptiveConfig, params: SystemParams):
        super().__init__(params.p_max)
        self.cfg = cfg
        self.params = params
        self.b_eps = params.min_budget
        self._log_q = math.log1p(cfg.quantization)
        self._cache: dict[int, float] = {}

    def descriptor(self) -> dict:
        return {"kind": "adaptive", "w": self.cfg.w}

    def __call__(self, t, budget, gain_bob, message):
        budget = np.asarray(budget, dtype=float)
        h = np.broadcast_to(np.asarray(gain_bob, dtype=float), budget.shape)
        delta = budget - self.b_eps
        out = np.full(budget.shape, self.p_max)
        active = (delta > 0) & (h > 1e-12)
        if np.any(active):
            if self.cfg.cache:
                out[active] = self._cached(h[active], delta[active])
            else:
                out[active] = argmax_g(h[active], delta[active], self.cfg, self.params)
        return out[()] if out.ndim == 0 else out

    def _cached(self, h, delta):
        kh = np.rint(np.log(h) / self._log_q).astype(np.int64)
        kd = np.rint(np.log(delta) / self._log_q).astype(np.int64)
        keys = ((kh + (1 << 24)) << 26) | (kd + (1 << 24))
        uniq, inv = np.unique(keys, return_inverse=True)
        cache = self._cache
        vals = np.array([cache.get(int(k), np.nan) for k in uniq])
        missing = np.isnan(vals)
        if np.any(missing):
            mk = uniq[missing]
            qh = np.exp(((mk >> 26) - (1 << 24)) * self._log_q)
            qd = np.exp(((mk & ((1 << 26) - 1)) - (1 << 24)) * self._log_q)
            new = argmax_g(qh, qd, self.cfg, self.params)
            vals[missing] = new
            cache.update(zip(mk.tolist(), new.tolist()))
        return vals[inv.reshape(-1)]


def adaptive_policy(cfg: AdaptiveConfig, params: SystemParams) -> AdaptivePolicy:
    return AdaptivePolicy(cfg, params)


def policy_from_descriptor(desc: dict, params: SystemParams, cache: bool = True) -> PowerPolicy:
    """Build a policy from ``{"kind": ..., ...}``."""
    kind = desc.get("kind")
    if kind == "constant":
        if "power_db" not in desc:
            raise ConfigError("constant policy needs power_db")
        return ConstantPolicy(db_to_linear(float(desc["power_db"])), params.p_max)
    if kind == "max_power":
        return max_power_policy(params)
    if kind == "const_budget":
        return const_budget_policy(params)
    if kind == "adaptive":
        return AdaptivePolicy(AdaptiveConfig(w=float(desc.get("w", 0.002)), cache=cache), params)
    if kind == "rl":
        from .rl.trainer import load_policy

        if "path" not in desc:
            raise ConfigError("rl policy needs a path to a policy file")
        return load_policy(desc["path"], params)
    raise ConfigError(f"unknown policy kind {kind!r}")
