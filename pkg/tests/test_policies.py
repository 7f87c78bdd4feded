import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from keybudget.errors import ConfigError
from keybudget.model import SystemParams, cond_expected_skg_rate, linear_to_db
from keybudget.policies import (
    AdaptiveConfig,
    AdaptivePolicy,
    ConstantPolicy,
    adaptive_policy,
    argmax_g,
    const_budget_policy,
    const_budget_power,
    constant_policy,
    golden_section_max,
    max_power_policy,
    policy_from_descriptor,
)
from keybudget.ruin import expected_usage

ADAPT = AdaptiveConfig(w=0.002)
FIXED = [max_power_policy(SystemParams()), const_budget_policy(SystemParams()), constant_policy(10.0, 1000.0)]


def brute_argmax(h, delta, w=0.002, lam=1.0, p_max=1000.0):
    """Dense log grid, 200k points over [1e-2, P_max]."""
    p = np.exp(np.linspace(math.log(1e-2), math.log(p_max), 200_001))
    vals = np.log(cond_expected_skg_rate(p, h, lam)) - w * delta * np.log(p)
    return p[np.argmax(vals)]


def test_constant_policy():
    pol = constant_policy(10.0, 1000.0)
    assert np.array_equal(pol(5, np.array([1.0, 80.0]), np.array([0.1, 9.0]), np.array([True, False])), [10.0, 10.0])
    assert pol.descriptor() == {"kind": "constant", "power_db": pytest.approx(10.0)}
    for bad in (0.0, -1.0, 1000.1):
        with pytest.raises(ValueError):
            constant_policy(bad, 1000.0)
    assert max_power_policy(SystemParams())(1, 3.0, 1.0, False) == 1000.0


def test_const_budget_power(params):
    p = const_budget_power(params)
    assert linear_to_db(p) == pytest.approx(3.12, abs=0.05)
    assert abs(expected_usage(params, p)) <= 1e-3
    assert const_budget_power(params.with_(p_tx=0.0)) == 0.0
    with pytest.raises(ValueError):
        const_budget_power(params.with_(p_tx=0.9))
    assert const_budget_policy(params).kind == "const_budget"


def test_golden_section_on_p_exp_minus_p():
    x = golden_section_max(lambda p: p * np.exp(-p), np.array([0.0]), np.array([10.0]), 1e-4)
    assert x[0] == pytest.approx(1.0, rel=0.005)


def test_adaptive_below_threshold_is_max_power(params):
    pol = adaptive_policy(ADAPT, params)
    b = np.array([-5.0, 0.0, 20.0, 40.0])
    assert np.all(pol(1, b, np.ones(4), np.zeros(4, bool)) == params.p_max)


def test_adaptive_small_w_is_max_power(params):
    out = argmax_g(np.array([0.1, 1.0, 20.0]), np.array([10.0, 10.0, 10.0]), AdaptiveConfig(w=1e-9), params)
    assert np.allclose(out, params.p_max, rtol=0.005)


def test_adaptive_orderings(params):
    a = lambda h, d: float(argmax_g(h, d, ADAPT, params)[0])  # noqa: E731
    assert a(1.0, 10.0) > a(1.0, 50.0)
    for d in (10.0, 50.0):
        assert a(20.0, d) < a(1.0, d)


@pytest.mark.parametrize("h", [1.0, 20.0])
def test_adaptive_nonincreasing_in_surplus(params, h):
    out = argmax_g(np.full(5, h), np.array([5.0, 10.0, 20.0, 50.0, 100.0]), ADAPT, params)
    assert np.all(np.diff(out) <= 0)


@pytest.mark.parametrize("h,delta", [(0.05, 30.0), (1.0, 10.0), (1.0, 50.0), (5.0, 100.0), (20.0, 20.0), (80.0, 300.0)])
def test_argmax_matches_dense_grid(params, h, delta):
    assert float(argmax_g(h, delta, ADAPT, params)[0]) == pytest.approx(brute_argmax(h, delta), rel=0.006)


@given(
    st.integers(1, 5000),
    st.floats(-100.0, 1e4),
    st.floats(0.0, 1e3),
    st.booleans(),
    st.floats(1e-4, 0.1),
)
def test_policy_outputs_in_range(t, budget, h, message, w):
    params = SystemParams()
    pols = [
        AdaptivePolicy(AdaptiveConfig(w=w), params),
        AdaptivePolicy(AdaptiveConfig(w=w, cache=False), params),
    ]
    for pol in pols + FIXED:
        out = float(pol(t, budget, h, message))
        assert 0.0 <= out <= params.p_max


def test_cached_adaptive_close_to_exact(params):
    rng = np.random.default_rng(0)
    b = rng.uniform(41.0, 400.0, 500)
    h = rng.exponential(10.0, 500)
    cached = AdaptivePolicy(ADAPT, params)(1, b, h, np.zeros(500, bool))
    exact = AdaptivePolicy(AdaptiveConfig(w=0.002, cache=False), params)(1, b, h, np.zeros(500, bool))
    # 1% lattice on h and delta moves the optimum by a few percent at most
    assert np.max(np.abs(np.log(cached / exact))) < 0.05
    # the cache is order independent
    again = AdaptivePolicy(ADAPT, params)(1, b[::-1], h[::-1], np.zeros(500, bool))[::-1]
    assert np.array_equal(cached, again)


def test_adaptive_config_validation():
    with pytest.raises(ValueError):
        AdaptiveConfig(w=0.0)


def test_policy_from_descriptor(params):
    assert isinstance(policy_from_descriptor({"kind": "constant", "power_db": 10}, params), ConstantPolicy)
    assert policy_from_descriptor({"kind": "max_power"}, params).power == params.p_max
    ad = policy_from_descriptor({"kind": "adaptive", "w": 0.01}, params, cache=False)
    assert ad.cfg.w == 0.01 and not ad.cfg.cache
    assert ad.descriptor() == {"kind": "adaptive", "w": 0.01}
    for bad in ({"kind": "nope"}, {"kind": "constant"}, {"kind": "rl"}):
        with pytest.raises(ConfigError):
            policy_from_descriptor(bad, params)


@given(
    st.lists(st.tuples(st.floats(1e-3, 500.0), st.floats(0.05, 2000.0)), min_size=1, max_size=6),
    st.tuples(st.floats(1e-3, 500.0), st.floats(0.05, 2000.0)),
)
def test_argmax_is_independent_of_batch(others, probe):
    # workers fill their caches with different batches; each entry must not care
    params = SystemParams()
    h = np.array([probe[0]] + [o[0] for o in others])
    d = np.array([probe[1]] + [o[1] for o in others])
    assert argmax_g(h, d, ADAPT, params)[0] == argmax_g(probe[0], probe[1], ADAPT, params)[0]


def test_argmax_batch_with_boundary_optimum(params):
    # (81.3, 373.4) has its optimum at the lower search edge, a one-cell bracket
    h, d = np.array([81.28754307, 1.0]), np.array([373.44440124, 10.0])
    assert argmax_g(h, d, ADAPT, params)[0] == argmax_g(h[:1], d[:1], ADAPT, params)[0]
