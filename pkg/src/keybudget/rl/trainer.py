"""REINFORCE with a linear-Gaussian policy over transmit power in dB.

The policy mean is ``theta . phi(obs)`` with features

    phi = [1, (B - b_eps) / b0, log10(h / E[h]), message]

and a learned state-independent log standard deviation. Returns-to-go are
baselined by their per-slot mean across the batch of episodes. The deterministic
mean action is what gets deployed.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import TrainingDivergedError
from ..mathkit import RandomStream
from ..model import SystemParams, linear_to_db
from ..policies import PowerPolicy
from .env import KeyBudgetEnv, RewardWeights, resilience_outage_now

log = logging.getLogger(__name__)

FORMAT_TAG = "keybudget-gaussian-policy"
FORMAT_VERSION = 1
N_FEATURES = 4
# stream indices used for training episodes start here, clear of evaluation runs
TRAIN_STREAM_OFFSET = 1 << 40
NOISE_STREAM_OFFSET = 1 << 41


@dataclass(frozen=True)
class TrainerConfig:
    iterations: int = 150
    episodes: int = 64
    horizon: int = 400
    gamma: float = 0.98
    learning_rate: float = 0.2
    init_mean_db: float = 10.0
    init_log_std: float = math.log(3.0)
    min_log_std: float = math.log(0.3)
    max_log_std: float = math.log(10.0)
    action_low_db: float = -20.0
    seed: int = 0
    collapse_patience: int = 8
    collapse_margin: float = 1.0

    def __post_init__(self):
        if self.iterations < 0 or self.episodes < 2 or self.horizon < 1:
            raise ValueError("need iterations >= 0, episodes >= 2, horizon >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")


def features(budget, gain_bob, message, params: SystemParams) -> np.ndarray:
    budget = np.asarray(budget, dtype=float)
    surplus = np.clip((budget - params.min_budget) / params.initial_budget, -2.0, 5.0)
    with np.errstate(divide="ignore"):
        lh = np.clip(np.log10(np.asarray(gain_bob, dtype=float) / params.mean_gain_bob), -4.0, 2.0)
    msg = np.asarray(message, dtype=float)
    surplus, lh, msg = np.broadcast_arrays(surplus, lh, msg)
    return np.stack([np.ones_like(surplus), surplus, lh, msg], axis=-1)


@dataclass
class GaussianPolicyParams:
    theta: np.ndarray
    log_std: float
    action_low_db: float
    action_high_db: float

    def mean_db(self, phi):
        return np.clip(phi @ self.theta, self.action_low_db, self.action_high_db)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, [self.log_std, self.action_low_db, self.action_high_db]])


class RLPolicy(PowerPolicy):
    """Deterministic (mean-action) adapter of a trained Gaussian policy."""

    kind = "rl"

    def __init__(self, gp: GaussianPolicyParams, params: SystemParams, path: Optional[str] = None):
        super().__init__(params.p_max)
        self.gp = gp
        self.params = params
        self.path = path

    def __call__(self, t, budget, gain_bob, message):
        phi = features(budget, gain_bob, message, self.params)
        power = 10.0 ** (self.gp.mean_db(phi) / 10.0)
        out = np.minimum(power, self.p_max)
        return out[()] if np.ndim(out) == 0 else out

    def descriptor(self) -> dict:
        d = {"kind": "rl"}
        if self.path is not None:
            d["path"] = str(self.path)
        return d


def save_policy(path, gp: GaussianPolicyParams) -> None:
    """Layout: version header, then theta[0..3], log_std, action_low_db, action_high_db."""
    header = (
        f"{FORMAT_TAG} v{FORMAT_VERSION}\n"
        f"n_features {N_FEATURES}\n"
        "layout theta[0:n_features] log_std action_low_db action_high_db"
    )
    np.savetxt(path, gp.to_vector(), fmt="%.17g", header=header)


def load_policy_params(path) -> GaussianPolicyParams:
    with open(path) as fh:
        first = fh.readline().lstrip("#").strip()
    if first != f"{FORMAT_TAG} v{FORMAT_VERSION}":
        raise ValueError(f"{path}: unsupported policy file header {first!r}")
    v = np.loadtxt(path, ndmin=1)
    if v.size != N_FEATURES + 3:
        raise ValueError(f"{path}: expected {N_FEATURES + 3} values, found {v.size}")
    return GaussianPolicyParams(v[:N_FEATURES].copy(), float(v[N_FEATURES]), float(v[-2]), float(v[-1]))


def load_policy(path, params: SystemParams) -> RLPolicy:
    return RLPolicy(load_policy_params(path), params, path=str(path))


class _Adam:
    def __init__(self, size: int, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.k = 0

    def ascend(self, x, grad):
        self.k += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        mh = self.m / (1 - self.b1**self.k)
        vh = self.v / (1 - self.b2**self.k)
        return x + self.lr * mh / (np.sqrt(vh) + self.eps)


@dataclass
class TrainingRecord:
    iteration: int
    mean_return: float
    mean_power_db: float
    alpha_estimate: float


def _rollout(env: KeyBudgetEnv, gp: GaussianPolicyParams, cfg: TrainerConfig, it: int):
    n, T = cfg.episodes, cfg.horizon
    first = TRAIN_STREAM_OFFSET + it * n
    obs = env.reset(cfg.seed, np.arange(first, first + n))
    noise = RandomStream(cfg.seed, NOISE_STREAM_OFFSET + it).normal((T, n))
    std = math.exp(gp.log_std)
    phis = np.empty((T, n, N_FEATURES))
    acts = np.empty((T, n))
    rewards = np.empty((T, n))
    powers = np.empty((T, n))
    for k in range(T):
        phi = features(obs.budget, obs.gain_bob, obs.message, env.params)
        a = phi @ gp.theta + std * noise[k]
        p = 10.0 ** (np.clip(a, gp.action_low_db, gp.action_high_db) / 10.0)
        p = np.minimum(p, env.params.p_max)
        obs, r, _ = env.step(p)
        phis[k], acts[k], rewards[k], powers[k] = phi, a, r, p
    alpha = float(np.mean(resilience_outage_now(env)))
    return phis, acts, rewards, powers, alpha


def _returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    g = np.empty_like(rewards)
    acc = np.zeros(rewards.shape[1])
    for k in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[k] + gamma * acc
        g[k] = acc
    return g


def train_policy(
    params: SystemParams,
    weights: Optional[RewardWeights] = None,
    cfg: Optional[TrainerConfig] = None,
    log_path=None,
    policy_path=None,
) -> tuple[RLPolicy, list[TrainingRecord]]:
    """Train and return the deterministic policy with the training curve.

    Raises :class:`TrainingDivergedError` on non-finite parameters or when the
    mean return stays far below its best value for ``collapse_patience``
    iterations.
    """
    cfg = cfg or TrainerConfig()
    weights = weights or RewardWeights()
    env = KeyBudgetEnv(params, weights, horizon=cfg.horizon)
    high_db = float(linear_to_db(params.p_max))
    theta = np.array([cfg.init_mean_db, 0.0, 0.0, 0.0])
    gp = GaussianPolicyParams(theta, cfg.init_log_std, cfg.action_low_db, high_db)
    opt = _Adam(N_FEATURES + 1, cfg.learning_rate)
    history: list[TrainingRecord] = []
    best = -math.inf
    below = 0
    for it in range(cfg.iterations):
        phis, acts, rewards, powers, alpha = _rollout(env, gp, cfg, it)
        ret = _returns_to_go(rewards, cfg.gamma)
        adv = ret - ret.mean(axis=1, keepdims=True)
        scale = adv.std()
        adv = adv / scale if scale > 0 else adv
        std = math.exp(gp.log_std)
        z = (acts - phis @ gp.theta) / std
        g_theta = np.einsum("tn,tnf->f", adv * z / std, phis) / adv.size
        g_logstd = float(np.mean(adv * (z**2 - 1.0)))
        x = opt.ascend(np.concatenate([gp.theta, [gp.log_std]]), np.concatenate([g_theta, [g_logstd]]))
        if not np.all(np.isfinite(x)):
            raise TrainingDivergedError(f"iteration {it}: non-finite policy parameters {x}")
        gp = GaussianPolicyParams(x[:N_FEATURES], float(np.clip(x[-1], cfg.min_log_std, cfg.max_log_std)),
                                  gp.action_low_db, gp.action_high_db)

        mean_return = float(rewards.sum(axis=0).mean() / cfg.horizon)
        rec = TrainingRecord(it, mean_return, float(linear_to_db(powers.mean())), alpha)
        history.append(rec)
        log.info("iter %d  return/slot %.4f  power %.2f dB  alpha %.3f", it, *list(vars(rec).values())[1:])
        if not math.isfinite(mean_return):
            raise TrainingDivergedError(f"iteration {it}: non-finite return")
        best = max(best, mean_return)
        if mean_return < best - cfg.collapse_margin * (abs(best) + 1.0):
            below += 1
            if below >= cfg.collapse_patience:
                raise TrainingDivergedError(
                    f"return collapsed: {mean_return:.4g} per slot against best {best:.4g} "
                    f"for {below} iterations (theta={gp.theta}, log_std={gp.log_std:.3g})"
                )
        else:
            below = 0

    if log_path is not None:
        write_training_log(log_path, history)
    if policy_path is not None:
        save_policy(policy_path, gp)
    return RLPolicy(gp, params, path=None if policy_path is None else str(policy_path)), history


def write_training_log(path, history: list[TrainingRecord]) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_return", "mean_power_db", "alpha_estimate"])
        for r in history:
            w.writerow([r.iteration, repr(r.mean_return), repr(r.mean_power_db), repr(r.alpha_estimate)])
