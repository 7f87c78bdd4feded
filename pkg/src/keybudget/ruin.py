"""Ruin probabilities of the constant-power budget walk on a budget grid.

One-step conditioning on the first slot gives, with ``psi_b(0) = 1{b <= 0}``::

    psi_b(t) = p * psi_{b-L}(t-1) + (1-p) * E_R[ psi_{b+R}(t-1) ]

where ``psi = 1`` for budgets ``<= 0``. The expectation over the key rate R
is a correlation of psi with a kernel of linear-interpolation ("hat") weights
built from the exact CDF of R. Ultimate ruin is the fixed point of the same
map, solved with GMRES (value iteration is available as a fallback).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, optimize, signal
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import CapTooSmallError, ConvergenceError
from .mathkit import RandomStream
from .model import SystemParams, expected_skg_rate, gains_from_uniforms, skg_rate_cdf, skg_rate_from_snr

LEAK_TOL = 1e-6


def expected_usage(params: SystemParams, power: float) -> float:
    """E[Z] = p L - (1 - p) E[R_SK]."""
    p = params.p_tx
    rate = expected_skg_rate(params, power) if p < 1.0 else 0.0
    return p * params.msg_len - (1.0 - p) * rate


def critical_probability(params: SystemParams, power: float) -> float:
    """Message probability at which the mean usage changes sign."""
    rate = expected_skg_rate(params, power)
    return rate / (rate + params.msg_len)


@dataclass(frozen=True)
class UsageDistribution:
    """Law of Z at constant power: atom at +L (mass p) and -R_SK (mass 1-p)."""

    params: SystemParams
    power: float

    @property
    def atom_mass(self) -> float:
        return self.params.p_tx

    def rate_cdf(self, r):
        return skg_rate_cdf(self.params, self.power, r)

    def mean(self) -> float:
        return expected_usage(self.params, self.power)


def _mgf_minus_one(params: SystemParams, power: float, r: float) -> float:
    """E[exp(r Z)] - 1, using E[exp(-r R)] = 1 - r * int_0^inf exp(-r x) Pr(R > x) dx."""
    p, L = params.p_tx, params.msg_len
    tail = integrate.quad(lambda x: math.exp(-r * x) * (1.0 - float(skg_rate_cdf(params, power, x))),
                          0.0, math.inf, limit=200)[0]
    return p * math.exp(r * L) + (1.0 - p) * (1.0 - r * tail) - 1.0


def adjustment_coefficient(params: SystemParams, power: float) -> float:
    """Positive root r of E[exp(r Z)] = 1; NaN when E[Z] >= 0, inf when p = 0.

    Gives the Lundberg bound psi_b(inf) <= exp(-r b).
    """
    if params.p_tx == 0.0:
        return math.inf  # no upward jumps at all
    if expected_usage(params, power) >= 0:
        return math.nan

    def excess(r):
        return _mgf_minus_one(params, power, r)

    lo = 1e-9
    if excess(lo) >= 0:
        return math.nan
    hi = 1.0 / params.msg_len
    while excess(hi) < 0:
        hi *= 2.0
    return optimize.brentq(excess, lo, hi, xtol=1e-12, rtol=1e-10)


_CAP_LOG_TOL = 16.0  # exp(-16) ~ 1e-7 ruin mass beyond the cap


def _chernoff_cap(params: SystemParams, power: float, horizon: float) -> float:
    """Smallest b with min_r exp(-r b) max(1, E[exp(r Z)])^t <= exp(-16).

    exp(r S_n) / max(1, M(r))^n is a supermartingale, so the maximal
    inequality bounds psi_b(t) by exp(-r b) max(1, M(r))^t for every r > 0.
    """
    def need(log_r):
        r = math.exp(log_r)
        log_m = math.log1p(max(_mgf_minus_one(params, power, r), 0.0))
        return (_CAP_LOG_TOL + horizon * log_m) / r

    res = optimize.minimize_scalar(need, bounds=(math.log(1e-5), math.log(10.0)), method="bounded",
                                   options={"xatol": 1e-3})
    return float(res.fun)


def default_cap(params: SystemParams, power: float, horizon: float = math.inf) -> float:
    """Grid cap: b0 + 100 L, widened so the ruin mass beyond it is ~1e-7.

    Ultimate ruin uses the Lundberg bound (16 / R*). Finite horizons use the
    Chernoff-type bound above, and never more than t L + L since Z <= L gives
    psi_b(t) = 0 for b > t L.
    """
    cap = params.initial_budget + 100.0 * params.msg_len
    if params.p_tx == 0.0:
        return cap
    r = adjustment_coefficient(params, power)
    need = _CAP_LOG_TOL / r if r == r else math.inf
    if math.isfinite(horizon):
        need = min(need, _chernoff_cap(params, power, horizon), horizon * params.msg_len + params.msg_len)
    return max(cap, math.ceil(need))


@dataclass(frozen=True)
class RuinGridConfig:
    step: float = 0.05
    cap: Optional[float] = None  # default: see default_cap
    kernel: str = "cdf"  # "cdf" (exact rate CDF) or "empirical"
    empirical_draws: int = 1_000_000
    empirical_seed: int = 0
    subbins: int = 20
    tol: float = 1e-8
    max_iter: int = 200_000
    max_points: int = 100_000  # refuse default caps beyond this many nodes

    def resolve_cap(self, params: SystemParams, power: float, horizon: float = math.inf) -> float:
        return self.cap if self.cap is not None else default_cap(params, power, horizon)


@dataclass
class RuinGrid:
    budget_axis: np.ndarray
    psi: np.ndarray
    t: float  # slots; math.inf for ultimate ruin

    def at(self, budget: float) -> float:
        if budget <= 0:
            return 1.0
        return float(np.interp(budget, self.budget_axis, self.psi))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["budget_bits", "psi"])
            for b, v in zip(self.budget_axis, self.psi):
                w.writerow([repr(float(b)), repr(float(v))])


def _hat_weights(masses, positions, step, n):
    """Spread point masses onto grid nodes 0..n-1 by linear interpolation."""
    pos = positions / step
    j = np.floor(pos).astype(np.int64)
    frac = pos - j
    w = np.zeros(n + 1)
    keep = j < n
    np.add.at(w, j[keep], masses[keep] * (1.0 - frac[keep]))
    np.add.at(w, j[keep] + 1, masses[keep] * frac[keep])
    return w[:n]


def rate_kernel(params: SystemParams, power: float, cfg: RuinGridConfig, n: int) -> np.ndarray:
    """Hat weights ``w_j ~ E[hat(R/step - j)]`` of the SKG rate on ``n`` grid offsets."""
    step = cfg.step
    if cfg.kernel == "cdf":
        edges = np.arange(n * cfg.subbins + 1) * (step / cfg.subbins)
        masses = np.diff(skg_rate_cdf(params, power, edges))
        mids = 0.5 * (edges[1:] + edges[:-1])
        return _hat_weights(masses, mids, step, n)
    if cfg.kernel == "empirical":
        rng = RandomStream(cfg.empirical_seed, 0)
        u = rng.uniforms((cfg.empirical_draws, 2))
        hb, he = gains_from_uniforms(params, u[:, 0], u[:, 1])
        r = skg_rate_from_snr(power * hb, power * he)
        masses = np.full(r.size, 1.0 / r.size)
        return _hat_weights(masses, r, step, n)
    raise ValueError(f"unknown kernel route {cfg.kernel!r}")


class _RuinOperator:
    """One application of the conditioning map on the grid ``b_i = i * step``."""

    def __init__(self, params: SystemParams, power: float, cfg: RuinGridConfig, horizon: float = math.inf):
        step = cfg.step
        if step > params.msg_len / 10:
            warnings.warn(f"budget grid step {step} is coarse relative to L={params.msg_len}", RuntimeWarning)
        cap = cfg.resolve_cap(params, power, horizon)
        self.n = int(math.floor(cap / step)) + 1
        if cfg.cap is None and self.n > cfg.max_points:
            raise CapTooSmallError(
                f"drift too close to zero: the default cap {cap:g} needs {self.n} grid nodes "
                f"(max_points={cfg.max_points}); set an explicit cap"
            )
        self.axis = np.arange(self.n) * step
        self.p = params.p_tx
        self.shift = params.msg_len / step
        self.kernel_rev = rate_kernel(params, power, cfg, self.n)[::-1].copy()
        self.params = params

    def apply(self, psi: np.ndarray) -> np.ndarray:
        n = self.n
        lower = self.axis - self.params.msg_len
        if float(self.shift).is_integer():
            k = int(self.shift)
            down = np.ones(n)
            down[k:] = psi[: n - k]
        else:
            down = np.where(lower <= 0, 1.0, np.interp(lower, self.axis, psi))
        up = signal.oaconvolve(psi, self.kernel_rev, mode="full")[n - 1 : 2 * n - 1]
        out = self.p * down + (1.0 - self.p) * up
        out[0] = 1.0
        return out


def _check_leak(psi):
    if psi[-1] > LEAK_TOL:
        raise CapTooSmallError(f"ruin probability at the grid cap is {psi[-1]:.3g} > {LEAK_TOL}; raise the cap")


def ruin_curve(params: SystemParams, power: float, horizon: int, cfg: Optional[RuinGridConfig] = None):
    """psi_{b0}(t) for t = 0..horizon and the final grid."""
    cfg = cfg or RuinGridConfig()
    op = _RuinOperator(params, power, cfg, horizon)
    b0 = params.initial_budget
    psi = (op.axis <= 0).astype(float)
    curve = np.empty(horizon + 1)

    def at_b0(v):
        return 1.0 if b0 <= 0 else float(np.interp(b0, op.axis, v))

    curve[0] = at_b0(psi)
    for t in range(1, horizon + 1):
        psi = op.apply(psi)
        curve[t] = at_b0(psi)
    _check_leak(psi)
    return curve, RuinGrid(op.axis, psi, horizon)


def finite_time_ruin(params: SystemParams, power: float, t: int, cfg: Optional[RuinGridConfig] = None):
    """Return ``(psi_{b0}(t), RuinGrid)``."""
    curve, grid = ruin_curve(params, power, t, cfg)
    return float(curve[-1]), grid


def ultimate_ruin(
    params: SystemParams, power: float, cfg: Optional[RuinGridConfig] = None, method: str = "krylov"
) -> tuple[float, Optional[RuinGrid]]:
    """Return ``(psi_{b0}(inf), RuinGrid)``; the grid is None when ruin is certain.

    Near the zero-drift power the default cap (and so the grid) grows like
    1 / adjustment_coefficient.
    """
    cfg = cfg or RuinGridConfig()
    if method not in ("krylov", "iterate"):
        raise ValueError(f"unknown method {method!r}")
    if params.initial_budget <= 0 or expected_usage(params, power) >= 0:
        return 1.0, None
    op = _RuinOperator(params, power, cfg)
    if params.p_tx == 0.0:
        # the budget never moves down, so only b <= 0 is ruined
        grid = RuinGrid(op.axis, (op.axis <= 0).astype(float), math.inf)
        return grid.at(params.initial_budget), grid
    if method == "krylov":
        psi = _solve_krylov(op, cfg)
    else:
        psi = _solve_iterate(op, (op.axis <= 0).astype(float), cfg)
    _check_leak(psi)
    grid = RuinGrid(op.axis, psi, math.inf)
    return grid.at(params.initial_budget), grid


def _solve_iterate(op: _RuinOperator, psi: np.ndarray, cfg: RuinGridConfig) -> np.ndarray:
    for _ in range(cfg.max_iter):
        new = op.apply(psi)
        if np.max(np.abs(new - psi)) < cfg.tol:
            return new
        psi = new
    raise ConvergenceError(f"value iteration did not converge in {cfg.max_iter} steps")


def _solve_krylov(op: _RuinOperator, cfg: RuinGridConfig) -> np.ndarray:
    # unknowns are psi at b > 0; psi(0) = 1 enters through the affine part
    n = op.n

    def T(x):
        return op.apply(np.concatenate(([1.0], x)))[1:]

    c = T(np.zeros(n - 1))
    A = LinearOperator((n - 1, n - 1), matvec=lambda x: x - (T(x) - c), dtype=float)
    x, info = gmres(A, c, rtol=1e-12, atol=0.0, restart=200, maxiter=500)
    psi = np.clip(np.concatenate(([1.0], x)), 0.0, 1.0)
    residual = np.max(np.abs(op.apply(psi) - psi))
    if info != 0 or residual >= cfg.tol:
        # polish with plain iteration from the Krylov estimate
        psi = _solve_iterate(op, psi, cfg)
    return psi
