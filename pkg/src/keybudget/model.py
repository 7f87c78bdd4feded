"""Scenario parameters, Rayleigh channel draws and secret-key-generation rates.

Powers and SNRs are linear throughout; dB appears only in the harness and CLI.
Noise power is normalised to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import mathkit
from .mathkit import QuadratureSpec, RandomStream

LN2 = math.log(2.0)
_TINY = 1e-12


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0) if np.ndim(db) else 10.0 ** (float(db) / 10.0)


def linear_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


@dataclass(frozen=True)
class AlertLaw:
    """Distribution of the alert-state duration T (in slots).

    ``kind='poisson'`` is the law used throughout; ``kind='fixed'`` is a point
    mass at ``mean`` and exists for degenerate checks.
    """

    kind: str = "poisson"
    mean: float = 5.0

    def __post_init__(self):
        if self.kind not in ("poisson", "fixed"):
            raise ValueError(f"unknown alert law {self.kind!r}")
        if self.kind == "fixed" and (self.mean < 0 or self.mean != int(self.mean)):
            raise ValueError("fixed alert duration must be a non-negative integer")

    def quantile(self, q: float) -> int:
        if self.kind == "fixed":
            return int(self.mean)
        return mathkit.poisson_quantile(self.mean, q)

    def sf(self, k: int) -> float:
        """Pr(T > k)."""
        if self.kind == "fixed":
            return 1.0 if k < self.mean else 0.0
        return mathkit.poisson_sf(self.mean, k)

    def sample(self, rng: RandomStream) -> int:
        if self.kind == "fixed":
            return int(self.mean)
        return rng.poisson(self.mean)


@dataclass(frozen=True)
class SystemParams:
    """All scenario constants, linear units.

    Defaults are the numerical-study scenario: E[H_B^2] = 10 dB,
    E[H_E^2] = 0 dB, p = 0.35, L = 5 bit, b0 = 70 bit, eps~ = 0.1,
    T ~ Pois(5), P_max = 30 dB, 2000 slots.
    """

    mean_gain_bob: float = 10.0
    mean_gain_eve: float = 1.0
    p_tx: float = 0.35
    msg_len: float = 5.0
    initial_budget: float = 70.0
    eps_tilde: float = 0.1
    alert_mean: float = 5.0
    p_max: float = 1000.0
    horizon: int = 2000
    alert_kind: str = "poisson"
    alert: AlertLaw = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.mean_gain_bob > 0 and self.mean_gain_eve > 0 and self.p_max > 0):
            raise ValueError("channel gains and P_max must be positive")
        if not 0.0 <= self.p_tx <= 1.0:
            raise ValueError("p_tx must lie in [0, 1]")
        if not self.msg_len > 0:
            raise ValueError("msg_len must be positive")
        if not 0.0 < self.eps_tilde < 1.0:
            raise ValueError("eps_tilde must lie in (0, 1)")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "alert", AlertLaw(self.alert_kind, self.alert_mean))

    @property
    def lambda_eve(self) -> float:
        return 1.0 / self.mean_gain_eve

    @property
    def min_budget(self) -> float:
        return self.alert.quantile(1.0 - self.eps_tilde) * self.msg_len

    def with_(self, **kw) -> "SystemParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class ChannelDraw:
    gain_bob: float
    gain_eve: float


@dataclass(frozen=True)
class SnrPair:
    snr_bob: float
    snr_eve: float


def gains_from_uniforms(params: SystemParams, u_bob, u_eve):
    """Exponential (Rayleigh power) gains by inversion of uniforms in [0, 1)."""
    return -params.mean_gain_bob * np.log1p(-u_bob), -params.mean_gain_eve * np.log1p(-u_eve)


def sample_channel(params: SystemParams, rng: RandomStream, size=None):
    """Draw ``H_B^2`` and ``H_E^2``; a :class:`ChannelDraw` when ``size`` is None."""
    shape = (2,) if size is None else (size, 2)
    u = rng.uniforms(shape)
    hb, he = gains_from_uniforms(params, u[..., 0], u[..., 1])
    if size is None:
        return ChannelDraw(float(hb), float(he))
    return hb, he


def rates(snr: SnrPair) -> tuple[float, float]:
    return float(np.log2(1.0 + snr.snr_bob)), float(np.log2(1.0 + snr.snr_eve))


def skg_rate_from_snr(x, y):
    """log2((1 + X + Y) / (1 + Y)), vectorised; written as log1p for small X."""
    return np.log1p(np.asarray(x) / (1.0 + np.asarray(y))) / LN2


def skg_rate(snr: SnrPair) -> float:
    return float(skg_rate_from_snr(snr.snr_bob, snr.snr_eve))


def cond_expected_skg_rate(power, gain_bob, lambda_eve):
    """E[R_SK | H_B^2 = h] at transmit power ``power`` under Rayleigh Eve.

    Closed form with the exponential integral. With ``a = lambda/P`` and
    ``b = lambda (h + 1/P)`` the two Ei products reduce to the scaled
    ``exp(z) E1(z)`` evaluated at ``a`` and ``b``, which avoids overflow for
    large ``lambda h``::

        (1/ln 2) [ -s(a) + s(b) + ln(1 + h P) ],   s(z) = e^z E1(z)

    Vectorised over all arguments. Returns 0 where ``P`` or ``h`` is below 1e-12.
    """
    P, h, lam = np.broadcast_arrays(
        np.asarray(power, dtype=float), np.asarray(gain_bob, dtype=float), np.asarray(lambda_eve, dtype=float)
    )
    out = np.zeros(P.shape, dtype=float)
    ok = (P > _TINY) & (h > _TINY)
    if np.any(ok):
        Pk, hk, lk = P[ok], h[ok], lam[ok]
        a = lk / Pk
        b = lk * (hk + 1.0 / Pk)
        val = (-mathkit.scaled_e1(a) + mathkit.scaled_e1(b) + np.log1p(hk * Pk)) / LN2
        out[ok] = np.maximum(val, 0.0)
    return out[()] if out.ndim == 0 else out


def skg_rate_cdf(params: SystemParams, power: float, r):
    """Pr(R_SK <= r) at constant power, both links Rayleigh.

    R_SK <= r  iff  X <= c (1 + Y) with c = 2^r - 1; averaging the
    exponential tail of X over Y gives ``1 - exp(-c/(P m_B)) / (1 + c m_E/m_B)``.
    """
    r = np.asarray(r, dtype=float)
    with np.errstate(over="ignore"):
        c = np.expm1(np.maximum(r, 0.0) * LN2)
        tail = np.exp(-c / (power * params.mean_gain_bob)) / (1.0 + c * params.mean_gain_eve / params.mean_gain_bob)
    tail = np.where(np.isfinite(c), tail, 0.0)
    return np.where(r < 0, 0.0, 1.0 - tail)


def expected_skg_rate(params: SystemParams, power: float, spec: QuadratureSpec | None = None) -> float:
    """E[R_SK] over both fadings: the conditional closed form integrated against H_B^2."""
    if power <= _TINY:
        return 0.0
    spec = spec or QuadratureSpec(rtol=1e-10)
    mb = params.mean_gain_bob
    lam = params.lambda_eve

    def integrand(y):
        # substitute h = mb*y so the density is exp(-y)
        return float(cond_expected_skg_rate(power, mb * y, lam)) * math.exp(-y)

    return mathkit.integrate_semi_infinite(integrand, spec)
