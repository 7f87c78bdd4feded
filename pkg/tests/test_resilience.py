import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from keybudget.budget import simulate_block
from keybudget.model import AlertLaw, SystemParams
from keybudget.policies import ConstantPolicy
from keybudget.resilience import (
    BoundPair,
    ResilienceConfig,
    accumulated_usage_cdf,
    alert_outage_prob,
    bounds_series,
    min_budget,
    outage_indicator,
    resilience_outage_mc,
    theorem1_bounds,
    write_alpha_csv,
)
from keybudget.ruin import ruin_curve


def test_min_budget_examples():
    assert min_budget(ResilienceConfig.from_params(SystemParams())) == 40.0
    assert min_budget(ResilienceConfig.from_params(SystemParams(alert_mean=6, msg_len=2))) == 18.0
    with pytest.raises(ValueError):
        ResilienceConfig(1.0, AlertLaw("poisson", 5.0), 5.0)


def test_min_budget_matches_scipy_quantile():
    for mean, eps, L in [(5.0, 0.1, 5.0), (6.0, 0.1, 2.0), (12.5, 0.01, 1.0), (0.7, 0.3, 3.0)]:
        cfg = ResilienceConfig(eps, AlertLaw("poisson", mean), L)
        assert cfg.min_budget == stats.poisson.ppf(1 - eps, mean) * L


@pytest.mark.parametrize("budget", [0.5, 4.99, 5.0, 12.0, 39.9, 40.0, 55.5, 200.0])
def test_alert_outage_prob_against_scipy(budget):
    cfg = ResilienceConfig.from_params(SystemParams())
    # default: outage iff T L > B
    assert alert_outage_prob(budget, True, cfg) == pytest.approx(stats.poisson.sf(math.floor(budget / 5.0), 5.0), abs=1e-14)
    strict = ResilienceConfig.from_params(SystemParams(), strict=True)
    # strict: outage iff (T + 1) L >= B, i.e. T >= B / L - 1
    ref = stats.poisson.sf(math.ceil(budget / 5.0 - 1.0) - 1, 5.0)
    assert alert_outage_prob(budget, True, strict) == pytest.approx(ref, abs=1e-14)


def test_ruined_or_empty_means_certain_outage():
    cfg = ResilienceConfig.from_params(SystemParams())
    assert alert_outage_prob(50.0, False, cfg) == 1.0
    assert alert_outage_prob(0.0, True, cfg) == 1.0
    assert alert_outage_prob(-3.0, True, cfg) == 1.0
    out = alert_outage_prob(np.array([50.0, 50.0]), np.array([True, False]), cfg)
    assert out[1] == 1.0 and out[0] < 0.1


@given(
    st.lists(st.floats(-20.0, 300.0), min_size=1, max_size=40),
    st.floats(0.5, 20.0),
    st.sampled_from([0.01, 0.05, 0.1, 0.3]),
    st.floats(0.5, 8.0),
)
def test_threshold_equivalence(budgets, mean, eps, L):
    cfg = ResilienceConfig(eps, AlertLaw("poisson", mean), L)
    b = np.array(budgets)
    alive = b > 0
    direct = alert_outage_prob(b, alive, cfg) > eps
    assert np.array_equal(direct, outage_indicator(b, alive, cfg))


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_bounds_are_ordered_and_contain_extreme_couplings(f_s, psi):
    bp = theorem1_bounds(f_s, psi)
    assert 0.0 <= bp.lower <= bp.upper <= 1.0
    # alpha = Pr(S > s or ruined); Frechet extremes of a union
    assert bp.lower == pytest.approx(max(1.0 - f_s, psi))
    assert bp.upper == pytest.approx(min(1.0, 1.0 - f_s + psi))
    lo, hi = bounds_series([f_s], [psi])
    assert lo[0] == bp.lower and hi[0] == bp.upper


def test_bound_pair_validation():
    with pytest.raises(ValueError):
        BoundPair(0.5, 0.4, 1)


def test_mc_alpha_within_bounds():
    p = SystemParams(horizon=300)
    cfg = ResilienceConfig.from_params(p)
    blk = simulate_block(p, ConstantPolicy(10.0, p.p_max), 5, np.arange(4000))
    alpha = resilience_outage_mc((blk.budgets, blk.alive), cfg)
    f_s = accumulated_usage_cdf(blk.budgets, p, cfg)
    psi, _ = ruin_curve(p, 10.0, 300)
    lo, hi = bounds_series(f_s, psi)
    tol = 4 * np.sqrt(0.25 / 4000)
    assert np.all(alpha >= lo - tol) and np.all(alpha <= hi + tol)
    assert alpha[0] == 0.0
    # trajectory list input agrees with the matrix input
    trs = [blk.trajectory(i) for i in range(50)]
    assert np.array_equal(resilience_outage_mc(trs, cfg), resilience_outage_mc((blk.budgets[:50], blk.alive[:50]), cfg))


def test_alpha_csv(tmp_path):
    path = tmp_path / "alpha.csv"
    write_alpha_csv(path, [0.0, 0.5], [0.0, 0.4], [0.1, 0.6], [0.0, float("nan")])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "alpha", "alpha_lower_bound", "alpha_upper_bound", "psi_t"]
    assert rows[2] == ["1", "0.5", "0.4", "0.6", "nan"]
