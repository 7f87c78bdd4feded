"""Power-control environment with the four-term resilience reward.

The environment is vectorised over episodes: ``reset`` takes one stream index
per episode and every array in the observation has one entry per episode.
Channel and message draws are taken up front with the same stream layout as
:func:`keybudget.budget.simulate_block`, so a fixed action sequence gives
bit-identical budgets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..budget import draw_block_uniforms, slot_usage
from ..mathkit import neumaier_update
from ..model import SystemParams, gains_from_uniforms
from ..resilience import ResilienceConfig, alert_outage_prob

log = logging.getLogger(__name__)

EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class Observation:
    budget: np.ndarray
    gain_bob: np.ndarray
    message: np.ndarray


@dataclass(frozen=True)
class RewardWeights:
    """Weights on normalised mean power, log10 alpha, log10 eps and the budget penalty."""

    w1: float = -50.0
    w2: float = -10.0
    w3: float = -1.0
    w4: float = 10.0
    message_slot_reward: float = 1.0

    def __post_init__(self):
        if not (self.w1 < 0 and self.w2 < 0 and self.w3 < 0 and self.w4 > 0):
            raise ValueError("reward weights need w1, w2, w3 < 0 and w4 > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3, self.w4])


@dataclass
class EnvState:
    t: int
    budget: np.ndarray
    power_sum: np.ndarray
    outage_count: np.ndarray
    alive: np.ndarray
    # compensated running sum of usages
    usage_sum: np.ndarray = field(repr=False)
    usage_comp: np.ndarray = field(repr=False)

    @property
    def mean_power(self) -> np.ndarray:
        return self.power_sum / max(self.t, 1)


def reward_terms(state: EnvState, params: SystemParams, cfg: ResilienceConfig) -> np.ndarray:
    """Unweighted reward terms after a step, shape ``(4, episodes)``."""
    t = state.t
    mean_power = state.power_sum / t / params.p_max
    alpha = np.maximum(state.outage_count / t, 1.0 / t)
    eps = np.maximum(alert_outage_prob(state.budget, state.alive, cfg), EPS_FLOOR)
    penalty = np.minimum(1.0 - cfg.min_budget / np.maximum(state.budget, 1.0), 0.0)
    return np.stack([mean_power, np.log10(alpha), np.log10(eps), penalty])


def combine_reward(terms: np.ndarray, message: np.ndarray, weights: RewardWeights) -> np.ndarray:
    w = weights.as_array()
    skg = w[0] * terms[0] + w[1] * terms[1] + w[2] * terms[2] + w[3] * terms[3]
    return np.where(message, weights.message_slot_reward, skg)


class KeyBudgetEnv:
    """Budget process driven by externally chosen powers.

    Episodes end at the horizon only. Ruin clears the alive flag, which pins
    eps at 1 for the rest of the episode.
    """

    def __init__(
        self,
        params: SystemParams,
        weights: Optional[RewardWeights] = None,
        horizon: Optional[int] = None,
        strict: bool = False,
        record: bool = False,
    ):
        self.params = params
        self.weights = weights or RewardWeights()
        self.horizon = int(params.horizon if horizon is None else horizon)
        self.res_cfg = ResilienceConfig.from_params(params, strict)
        self.record = record
        self.log: list[dict] = []
        self.state: Optional[EnvState] = None

    def reset(self, seed: int, stream_indices=0) -> Observation:
        idx = np.atleast_1d(np.asarray(stream_indices, dtype=np.int64))
        u = draw_block_uniforms(seed, idx, self.horizon)
        self._message = u[:, :, 0] < self.params.p_tx
        self._hb, self._he = gains_from_uniforms(self.params, u[:, :, 1], u[:, :, 2])
        n = idx.size
        b0 = float(self.params.initial_budget)
        self.state = EnvState(
            t=0,
            budget=np.full(n, b0),
            power_sum=np.zeros(n),
            outage_count=np.zeros(n),
            alive=np.full(n, b0 > 0),
            usage_sum=np.zeros(n),
            usage_comp=np.zeros(n),
        )
        self.log = []
        return self._observe()

    @property
    def num_episodes(self) -> int:
        return self.state.budget.size

    def _observe(self) -> Observation:
        k = self.state.t
        if k >= self.horizon:
            n = self.num_episodes
            return Observation(self.state.budget.copy(), np.zeros(n), np.zeros(n, dtype=bool))
        return Observation(self.state.budget.copy(), self._hb[:, k].copy(), self._message[:, k].copy())

    def step(self, action):
        """Apply powers for the current slot; returns ``(obs, reward, done)``."""
        st = self.state
        if st is None:
            raise RuntimeError("call reset() first")
        if st.t >= self.horizon:
            raise RuntimeError("episode is over; call reset()")
        p_max = self.params.p_max
        action = np.broadcast_to(np.asarray(action, dtype=float), st.budget.shape)
        bad = ~((action >= 0.0) & (action <= p_max))
        if np.any(bad):
            log.warning("clamping %d action(s) into [0, %g]", int(bad.sum()), p_max)
            action = np.clip(np.nan_to_num(action, nan=0.0), 0.0, p_max)
        k = st.t
        message = self._message[:, k]
        z = slot_usage(self.params, message, action, self._hb[:, k], self._he[:, k])
        st.usage_sum, st.usage_comp = neumaier_update(st.usage_sum, st.usage_comp, z)
        st.budget = self.params.initial_budget - (st.usage_sum + st.usage_comp)
        st.t = k + 1
        st.power_sum = st.power_sum + action
        st.alive = st.alive & (st.budget > 0)
        eps = alert_outage_prob(st.budget, st.alive, self.res_cfg)
        st.outage_count = st.outage_count + (eps > self.res_cfg.eps_tilde)
        terms = reward_terms(st, self.params, self.res_cfg)
        reward = combine_reward(terms, message, self.weights)
        if self.record:
            self.log.append({
                "t": st.t,
                "message": message.copy(),
                "power": action.copy(),
                "budget": st.budget.copy(),
                "terms": terms,
                "reward": reward,
            })
        done = st.t >= self.horizon
        return self._observe(), reward, done


def env_reset(params: SystemParams, seed: int, stream_index: int = 0, **kw):
    env = KeyBudgetEnv(params, **kw)
    return env, env.reset(seed, stream_index)


def env_step(env: KeyBudgetEnv, action):
    return env.step(action)


def resilience_outage_now(env: KeyBudgetEnv) -> np.ndarray:
    """Per-episode indicator of eps(t) > eps~ at the current slot."""
    eps = alert_outage_prob(env.state.budget, env.state.alive, env.res_cfg)
    return eps > env.res_cfg.eps_tilde


__all__ = [
    "EPS_FLOOR",
    "EnvState",
    "KeyBudgetEnv",
    "Observation",
    "RewardWeights",
    "combine_reward",
    "env_reset",
    "env_step",
    "resilience_outage_now",
    "reward_terms",
]
