import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from keybudget.mathkit import RandomStream
from keybudget.model import (
    AlertLaw,
    ChannelDraw,
    SnrPair,
    SystemParams,
    cond_expected_skg_rate,
    db_to_linear,
    expected_skg_rate,
    gains_from_uniforms,
    linear_to_db,
    rates,
    sample_channel,
    skg_rate,
    skg_rate_cdf,
    skg_rate_from_snr,
)

# 48-point (P, h, lambda_E) grid
GRID_P = [0.1, 1.0, 10.0, 1000.0]
GRID_H = [0.01, 0.5, 2.0, 50.0]
GRID_LAM = [0.1, 1.0, 10.0]


def rate_oracle(power, h, lam):
    """E_Y[log2(1 + hP/(1 + yP))], Y ~ Exp(lam), by adaptive quadrature."""
    f = lambda y: math.log2(1.0 + h * power / (1.0 + y * power)) * lam * math.exp(-lam * y)  # noqa: E731
    head = integrate.quad(f, 0.0, 1.0 / lam, epsabs=0.0, epsrel=1e-12, limit=400)[0]
    tail = integrate.quad(f, 1.0 / lam, np.inf, epsabs=0.0, epsrel=1e-12, limit=400)[0]
    return head + tail


def test_db_roundtrip():
    assert db_to_linear(30.0) == pytest.approx(1000.0)
    assert db_to_linear(np.array([0.0, 10.0])) == pytest.approx([1.0, 10.0])
    assert linear_to_db(db_to_linear(3.12)) == pytest.approx(3.12)


def test_defaults():
    p = SystemParams()
    assert (p.mean_gain_bob, p.mean_gain_eve, p.p_tx, p.msg_len) == (10.0, 1.0, 0.35, 5.0)
    assert (p.initial_budget, p.eps_tilde, p.p_max, p.horizon) == (70.0, 0.1, 1000.0, 2000)
    assert p.alert == AlertLaw("poisson", 5.0)
    assert p.lambda_eve == 1.0
    assert p.min_budget == 40.0
    assert p.with_(p_tx=0.45).p_tx == 0.45


@pytest.mark.parametrize(
    "kw",
    [{"mean_gain_bob": 0.0}, {"p_tx": 1.5}, {"msg_len": 0.0}, {"eps_tilde": 1.0}, {"horizon": 0}, {"alert_kind": "geo"}],
)
def test_params_validation(kw):
    with pytest.raises(ValueError):
        SystemParams(**kw)


def test_fixed_alert_law():
    law = AlertLaw("fixed", 6)
    assert law.quantile(0.9) == 6
    assert law.sf(5) == 1.0 and law.sf(6) == 0.0
    assert law.sample(RandomStream(0)) == 6
    with pytest.raises(ValueError):
        AlertLaw("fixed", 2.5)


def test_rate_formula_examples():
    assert skg_rate(SnrPair(10.0, 0.0)) == pytest.approx(math.log2(11.0))
    assert skg_rate(SnrPair(0.0, 5.0)) == 0.0
    rb, re = rates(SnrPair(3.0, 1.0))
    assert (rb, re) == (2.0, 1.0)
    # tiny SNR keeps full relative precision
    assert skg_rate_from_snr(1e-12, 0.0) == pytest.approx(1e-12 / math.log(2), rel=1e-12)


@given(st.floats(0.0, 1e6), st.floats(0.0, 1e6))
def test_rate_is_bob_minus_eve_mutual_information(x, y):
    r = skg_rate_from_snr(x, y)
    assert r >= 0.0
    assert r == pytest.approx(math.log2(1 + x + y) - math.log2(1 + y), abs=1e-9)


@pytest.mark.parametrize("power,h,lam", list(itertools.product(GRID_P, GRID_H, GRID_LAM)))
def test_conditional_rate_matches_quadrature(power, h, lam):
    assert float(cond_expected_skg_rate(power, h, lam)) == pytest.approx(rate_oracle(power, h, lam), rel=1e-8)


def test_conditional_rate_edge_cases():
    assert cond_expected_skg_rate(0.0, 1.0, 1.0) == 0.0
    assert cond_expected_skg_rate(10.0, 0.0, 1.0) == 0.0
    # large lambda * h: exp(b) E1(b) would overflow unscaled
    v = float(cond_expected_skg_rate(1000.0, 1e3, 1e4))
    assert math.isfinite(v) and v == pytest.approx(rate_oracle(1000.0, 1e3, 1e4), rel=1e-8)
    vec = cond_expected_skg_rate(np.array([1.0, 10.0]), np.array([[1.0], [2.0]]), 1.0)
    assert vec.shape == (2, 2)


@given(st.floats(1e-2, 1e3), st.floats(1e-3, 1e2), st.floats(1e-2, 10.0))
def test_conditional_rate_monotone_in_power_and_gain(power, h, lam):
    base = float(cond_expected_skg_rate(power, h, lam))
    assert float(cond_expected_skg_rate(power * 1.1, h, lam)) >= base
    assert float(cond_expected_skg_rate(power, h * 1.1, lam)) >= base
    assert base <= math.log2(1 + h * power) + 1e-12


def test_rate_cdf_against_monte_carlo(params):
    rng = RandomStream(5, 0)
    hb, he = sample_channel(params, rng, 400_000)
    r = skg_rate_from_snr(10.0 * hb, 10.0 * he)
    for level in (0.1, 0.5, 1.0, 2.0, 4.0):
        emp = np.mean(r <= level)
        se = math.sqrt(emp * (1 - emp) / r.size)
        assert abs(float(skg_rate_cdf(params, 10.0, level)) - emp) < 4 * se + 1e-9
    assert skg_rate_cdf(params, 10.0, -1.0) == 0.0
    assert skg_rate_cdf(params, 10.0, 1e4) == 1.0


def test_expected_rate_two_routes(params):
    # closed-form conditional integrated against h, and the tail integral of the CDF
    via_cond = expected_skg_rate(params, 10.0)
    via_cdf = integrate.quad(lambda r: 1.0 - float(skg_rate_cdf(params, 10.0, r)), 0, np.inf, epsrel=1e-11)[0]
    assert via_cond == pytest.approx(via_cdf, rel=1e-8)
    # zero drift at p_crit ~ 0.398 means E[R] = L p / (1 - p) ~ 3.308 there
    assert via_cond == pytest.approx(3.308370, abs=1e-5)
    assert expected_skg_rate(params, 0.0) == 0.0


def test_expected_rate_monte_carlo(params):
    hb, he = sample_channel(params, RandomStream(11, 0), 400_000)
    r = skg_rate_from_snr(10.0 * hb, 10.0 * he)
    assert abs(r.mean() - expected_skg_rate(params, 10.0)) < 4 * r.std() / math.sqrt(r.size)


def test_channel_sampling():
    p = SystemParams()
    draw = sample_channel(p, RandomStream(0, 0))
    assert isinstance(draw, ChannelDraw) and draw.gain_bob > 0 and draw.gain_eve > 0
    hb, he = sample_channel(p, RandomStream(0, 1), 200_000)
    assert hb.mean() == pytest.approx(10.0, rel=0.02)
    assert he.mean() == pytest.approx(1.0, rel=0.02)
    hb0, he0 = gains_from_uniforms(p, np.array([0.0]), np.array([0.0]))
    assert hb0[0] == 0.0 and he0[0] == 0.0
