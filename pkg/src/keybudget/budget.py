"""The secret-key budget random walk.

Each slot consumes three uniforms from the run's stream, in order: message
indicator, Bob's gain, Eve's gain. All three are consumed in every slot, so a
run's channel sequence does not depend on the policy (common random numbers
across policies), and a block draw of ``(horizon, 3)`` uniforms is
bit-identical to ``horizon`` single-slot draws.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError
from .mathkit import RandomStream, neumaier_update
from .model import SystemParams, gains_from_uniforms, skg_rate_from_snr

DRAWS_PER_SLOT = 3


@dataclass(frozen=True)
class SlotOutcome:
    message_sent: bool
    usage: float
    power_used: float
    gain_bob: float


@dataclass
class BudgetTrajectory:
    """One run: ``budgets[t]`` for t = 0..horizon, per-slot arrays for t = 1..horizon."""

    budgets: np.ndarray
    usage: np.ndarray
    message: np.ndarray
    power: np.ndarray
    gain_bob: np.ndarray

    @property
    def ruin_time(self) -> Optional[int]:
        hit = np.flatnonzero(self.budgets <= 0)
        return int(hit[0]) if hit.size else None

    @property
    def alive(self) -> np.ndarray:
        return np.logical_and.accumulate(self.budgets > 0)

    @property
    def outcomes(self) -> list[SlotOutcome]:
        return [
            SlotOutcome(bool(m), float(z), float(p), float(h))
            for m, z, p, h in zip(self.message, self.usage, self.power, self.gain_bob)
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "budget_bits", "usage_bits", "message", "power_linear"])
            w.writerow([0, repr(float(self.budgets[0])), "", "", ""])
            for t in range(1, len(self.budgets)):
                w.writerow([
                    t,
                    repr(float(self.budgets[t])),
                    repr(float(self.usage[t - 1])),
                    int(self.message[t - 1]),
                    repr(float(self.power[t - 1])),
                ])


@dataclass
class BlockResult:
    """Vectorised results for a block of runs (rows) in run-index order."""

    run_indices: np.ndarray
    budgets: np.ndarray  # (n, T+1)
    power: np.ndarray  # (n, T)
    message: np.ndarray  # (n, T)
    usage: np.ndarray  # (n, T)
    gain_bob: Optional[np.ndarray] = None

    @property
    def alive(self) -> np.ndarray:
        return np.logical_and.accumulate(self.budgets > 0, axis=1)

    def trajectory(self, row: int) -> BudgetTrajectory:
        gb = self.gain_bob[row] if self.gain_bob is not None else np.full(self.power.shape[1], np.nan)
        return BudgetTrajectory(self.budgets[row], self.usage[row], self.message[row], self.power[row], gb)


def _check_power(power, p_max):
    power = np.asarray(power, dtype=float)
    if np.any(~((power >= 0.0) & (power <= p_max))):
        bad = power[~((power >= 0.0) & (power <= p_max))]
        raise ContractError(f"policy returned power outside [0, P_max={p_max}]: {bad[:3]}")
    return power


def slot_usage(params: SystemParams, message, power, gain_bob, gain_eve):
    """Per-slot usage Z: L on message slots, minus the SKG rate otherwise."""
    rate = skg_rate_from_snr(power * gain_bob, power * gain_eve)
    return np.where(message, params.msg_len, -rate)


def step(budget: float, params: SystemParams, policy, t: int, rng: RandomStream) -> SlotOutcome:
    """Advance one slot from ``budget``; draws this slot's three uniforms."""
    u = rng.uniforms(DRAWS_PER_SLOT)
    message = bool(u[0] < params.p_tx)
    hb, he = gains_from_uniforms(params, u[1], u[2])
    power = float(_check_power(policy(t, np.float64(budget), np.float64(hb), np.bool_(message)), params.p_max))
    z = float(slot_usage(params, message, power, hb, he))
    return SlotOutcome(message, z, power, float(hb))


def draw_block_uniforms(master_seed: int, run_indices, horizon: int) -> np.ndarray:
    return np.stack([
        RandomStream(master_seed, int(i)).uniforms((horizon, DRAWS_PER_SLOT)) for i in run_indices
    ])


def simulate_block(
    params: SystemParams,
    policy,
    master_seed: int,
    run_indices,
    horizon: Optional[int] = None,
    keep_channels: bool = False,
) -> BlockResult:
    """Simulate the runs ``run_indices`` side by side.

    Runs continue after ruin; the budget may go negative. The budget is kept
    as ``b0 - S(t)`` with ``S`` a compensated running sum of usages.
    """
    run_indices = np.asarray(run_indices, dtype=np.int64)
    T = int(params.horizon if horizon is None else horizon)
    n = run_indices.size
    u = draw_block_uniforms(master_seed, run_indices, T)
    message = u[:, :, 0] < params.p_tx
    hb, he = gains_from_uniforms(params, u[:, :, 1], u[:, :, 2])
    del u

    b0 = float(params.initial_budget)
    budgets = np.empty((n, T + 1))
    budgets[:, 0] = b0
    power = np.empty((n, T))
    usage = np.empty((n, T))
    s = np.zeros(n)
    c = np.zeros(n)
    for t in range(1, T + 1):
        k = t - 1
        p_t = _check_power(policy(t, budgets[:, k], hb[:, k], message[:, k]), params.p_max)
        p_t = np.broadcast_to(p_t, (n,))
        z = slot_usage(params, message[:, k], p_t, hb[:, k], he[:, k])
        s, c = neumaier_update(s, c, z)
        budgets[:, t] = b0 - (s + c)
        power[:, k] = p_t
        usage[:, k] = z
    return BlockResult(run_indices, budgets, power, message, usage, hb if keep_channels else None)


def simulate_run(params: SystemParams, policy, rng: RandomStream, horizon: Optional[int] = None) -> BudgetTrajectory:
    """Simulate a single run from its stream."""
    res = simulate_block(params, policy, rng.master_seed, [rng.stream_index], horizon, keep_channels=True)
    return res.trajectory(0)


def alert_survival(budget_at_entry: float, params: SystemParams, rng: RandomStream, strict: bool = False) -> bool:
    """Draw an alert duration T and report whether the budget covers it.

    Default: survive iff ``B >= T * L``. With ``strict=True`` the literal
    ``B > (T + 1) * L`` reading is used instead.
    """
    T = params.alert.sample(rng)
    if strict:
        return budget_at_entry > (T + 1) * params.msg_len
    return budget_at_entry >= T * params.msg_len
