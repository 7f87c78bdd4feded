import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from keybudget.budget import (
    BudgetTrajectory,
    alert_survival,
    simulate_block,
    simulate_run,
    slot_usage,
    step,
)
from keybudget.errors import ContractError
from keybudget.mathkit import RandomStream
from keybudget.model import SystemParams
from keybudget.policies import ConstantPolicy, max_power_policy

SHORT = SystemParams(horizon=300)


def const(power, params=SHORT):
    return ConstantPolicy(power, params.p_max)


def test_step_sequence_matches_block():
    rng = RandomStream(4, 2)
    pol = const(10.0)
    b = SHORT.initial_budget
    budgets = [b]
    for t in range(1, SHORT.horizon + 1):
        out = step(b, SHORT, pol, t, rng)
        b = b - out.usage
        budgets.append(b)
    blk = simulate_block(SHORT, pol, 4, [2])
    # block keeps b0 - compensated S(t); the scalar loop subtracts directly
    assert np.allclose(blk.budgets[0], budgets, rtol=0, atol=1e-9)


def test_simulate_run_is_block_row():
    pol = const(5.0)
    tr = simulate_run(SHORT, pol, RandomStream(8, 17))
    blk = simulate_block(SHORT, pol, 8, [3, 17, 40], keep_channels=True)
    assert np.array_equal(tr.budgets, blk.budgets[1])
    assert np.array_equal(tr.gain_bob, blk.gain_bob[1])


def test_common_random_numbers_across_policies():
    a = simulate_block(SHORT, const(2.0), 1, np.arange(20))
    b = simulate_block(SHORT, const(200.0), 1, np.arange(20))
    assert np.array_equal(a.message, b.message)
    # usage on message slots identical, higher power never gives less key
    assert np.array_equal(a.usage[a.message], b.usage[b.message])
    assert np.all(b.usage[~b.message] <= a.usage[~a.message])


def test_usage_values():
    u = slot_usage(SHORT, np.array([True, False]), np.array([10.0, 10.0]), np.array([1.0, 1.0]), np.array([0.0, 0.0]))
    assert u[0] == SHORT.msg_len
    assert u[1] == pytest.approx(-np.log2(11.0))


def test_message_frequency():
    blk = simulate_block(SHORT, const(10.0), 3, np.arange(50))
    n = blk.message.size
    assert abs(blk.message.mean() - SHORT.p_tx) < 4 * np.sqrt(SHORT.p_tx * (1 - SHORT.p_tx) / n)


def test_no_messages_means_monotone_budget():
    p = SHORT.with_(p_tx=0.0)
    blk = simulate_block(p, const(10.0, p), 0, np.arange(5))
    assert np.all(np.diff(blk.budgets, axis=1) >= 0)


def test_all_messages_deterministic_drain():
    p = SHORT.with_(p_tx=1.0, horizon=20)
    blk = simulate_block(p, const(10.0, p), 0, [0])
    assert np.array_equal(blk.budgets[0], 70.0 - 5.0 * np.arange(21))
    assert blk.trajectory(0).ruin_time == 14


def test_runs_continue_after_ruin():
    p = SHORT.with_(p_tx=0.9, horizon=200)
    blk = simulate_block(p, const(1.0, p), 0, np.arange(10))
    assert np.all(blk.budgets[:, -1] < 0)
    alive = blk.alive
    assert np.all(alive[:, 0]) and not np.any(alive[:, -1])
    # once dead, always dead
    assert np.all(np.diff(alive.astype(int), axis=1) <= 0)


def test_policy_contract_violation():
    bad = lambda t, b, h, m: np.full(np.shape(b), 2000.0)  # noqa: E731
    with pytest.raises(ContractError):
        simulate_block(SHORT, bad, 0, [0])
    nan = lambda t, b, h, m: np.full(np.shape(b), np.nan)  # noqa: E731
    with pytest.raises(ContractError):
        step(70.0, SHORT, nan, 1, RandomStream(0))


def test_policy_sees_previous_budget_and_current_channel():
    seen = []

    def spy(t, b, h, m):
        seen.append((t, np.array(b, copy=True), np.array(h, copy=True)))
        return np.full(np.shape(b), 10.0)

    blk = simulate_block(SHORT.with_(horizon=5), spy, 0, [0, 1], keep_channels=True)
    assert [s[0] for s in seen] == [1, 2, 3, 4, 5]
    for t, b, h in seen:
        assert np.array_equal(b, blk.budgets[:, t - 1])
        assert np.array_equal(h, blk.gain_bob[:, t - 1])


@given(st.integers(0, 2**32 - 1), st.integers(0, 10_000))
def test_block_is_order_independent(seed, idx):
    p = SHORT.with_(horizon=40)
    pol = const(10.0, p)
    joint = simulate_block(p, pol, seed, [idx, idx + 1])
    alone = simulate_block(p, pol, seed, [idx + 1])
    assert np.array_equal(joint.budgets[1], alone.budgets[0])


def test_trajectory_csv(tmp_path):
    tr = simulate_run(SHORT.with_(horizon=10), max_power_policy(SHORT), RandomStream(0, 0))
    assert isinstance(tr, BudgetTrajectory)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "budget_bits", "usage_bits", "message", "power_linear"]
    assert len(rows) == 12
    assert float(rows[0 + 1][1]) == 70.0
    assert [float(r[1]) for r in rows[1:]] == list(tr.budgets)
    assert len(tr.outcomes) == 10 and tr.outcomes[0].power_used == 1000.0


def test_alert_survival_conventions():
    p = SystemParams(alert_kind="fixed", alert_mean=6, msg_len=2)
    rng = RandomStream(0)
    assert alert_survival(12.0, p, rng)
    assert not alert_survival(11.9, p, rng)
    # strict: B > (T+1) L
    assert not alert_survival(14.0, p, rng, strict=True)
    assert alert_survival(14.01, p, rng, strict=True)


def test_alert_survival_frequency_matches_tail():
    p = SystemParams()
    rng = RandomStream(2, 0)
    n = 20_000
    hits = sum(alert_survival(40.0, p, rng) for _ in range(n))
    expected = 1 - p.alert.sf(8)
    assert abs(hits / n - expected) < 4 * np.sqrt(expected * (1 - expected) / n)
