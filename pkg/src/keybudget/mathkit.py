"""Numerical building blocks: exponential integral, Poisson law, quadrature, RNG streams.

Every other module draws randomness through :class:`RandomStream` and evaluates
the conditional key rate through :func:`scaled_e1`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import ConvergenceError, DomainError

EULER_GAMMA = 0.57721566490153286060651209008240243
_SERIES_LIMIT = 6.0
_SERIES_TERMS = 42  # x^k / (k k!) < 1e-18 at x = 6 beyond this
_SERIES_COEF = [(-1.0) ** k / (k * math.factorial(k)) for k in range(1, _SERIES_TERMS + 1)]
_CF_MAX_ITER = 500
_FPMIN = 1e-300


# ---------------------------------------------------------------------------
# Exponential integral
# ---------------------------------------------------------------------------

def _e1_series(x):
    """E1(x) for 0 < x <= 6 from the convergent power series (Horner form)."""
    total = np.full_like(x, _SERIES_COEF[-1])
    for c in _SERIES_COEF[-2::-1]:
        total = total * x + c
    return -EULER_GAMMA - np.log(x) - total * x


def _e1_scaled_cf(x):
    """exp(x) * E1(x) for x > 6 by modified Lentz on the continued fraction."""
    b = x + 1.0
    c = np.full_like(x, 1.0 / _FPMIN)
    d = 1.0 / b
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for i in range(1, _CF_MAX_ITER + 1):
        an = -float(i * i)
        b = b + 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        # freeze each element at its own convergence step so results do not
        # depend on the other entries of the batch
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < 5e-16
        if np.all(done):
            return h
    raise ConvergenceError("continued fraction for E1 did not converge")


def scaled_e1(x):
    """Return ``exp(x) * E1(x)`` for ``x > 0``.

    The scaled form stays finite for large arguments, which is what the
    conditional key-rate formula needs: there the exponential prefactor and
    the exponential-integral argument coincide.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("scaled_e1 requires x > 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    small = x <= _SERIES_LIMIT
    if np.any(small):
        xs = x[small]
        out[small] = np.exp(xs) * _e1_series(xs)
    if np.any(~small):
        out[~small] = _e1_scaled_cf(x[~small])
    return out[0] if scalar else out


def _ei_positive(x):
    out = np.empty_like(x)
    mid = x <= 40.0
    if np.any(mid):
        xm = x[mid]
        total = np.zeros_like(xm)
        term = np.ones_like(xm)
        for k in range(1, 200):
            term = term * xm / k
            total = total + term / k
        out[mid] = EULER_GAMMA + np.log(xm) + total
    if np.any(~mid):
        xl = x[~mid]
        # asymptotic e^x/x * sum k!/x^k, truncated well before divergence at x > 40
        total = np.ones_like(xl)
        term = np.ones_like(xl)
        for k in range(1, 30):
            term = term * k / xl
            total = total + term
        out[~mid] = np.exp(xl) / xl * total
    return out


def exp_integral_ei(x):
    """Exponential integral Ei(x) for nonzero real ``x``.

    Negative arguments use ``Ei(x) = -E1(-x)``: a power series for
    ``|x| <= 6`` and a continued fraction beyond. Positive arguments are
    supported as well (series, then asymptotic expansion).

    Raises
    ------
    DomainError
        If any element is zero or not finite.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x == 0) or np.any(~np.isfinite(x)):
        raise DomainError("Ei is undefined at x = 0 and for non-finite x")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    neg = x < 0
    if np.any(neg):
        y = -x[neg]
        res = np.empty_like(y)
        small = y <= _SERIES_LIMIT
        if np.any(small):
            res[small] = -_e1_series(y[small])
        if np.any(~small):
            yl = y[~small]
            res[~small] = -np.exp(-yl) * _e1_scaled_cf(yl)
        out[neg] = res
    if np.any(~neg):
        out[~neg] = _ei_positive(x[~neg])
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Poisson law
# ---------------------------------------------------------------------------

def _check_lambda(lam):
    if not (math.isfinite(lam) and lam > 0):
        raise DomainError(f"Poisson mean must be finite and positive, got {lam}")


def poisson_logpmf(lam: float, k: int) -> float:
    _check_lambda(lam)
    if k < 0:
        return -math.inf
    return -lam + k * math.log(lam) - math.lgamma(k + 1)


def poisson_pmf_cdf(lam: float, k: int) -> tuple[float, float]:
    """Poisson pmf and cdf at integer ``k``; the pmf is evaluated in log space."""
    _check_lambda(lam)
    if k < 0:
        return 0.0, 0.0
    pmf = math.exp(poisson_logpmf(lam, k))
    cdf = math.fsum(math.exp(poisson_logpmf(lam, j)) for j in range(k + 1))
    return pmf, min(cdf, 1.0)


def poisson_sf(lam: float, k: int) -> float:
    """Upper tail ``Pr(T > k)``, summed directly when the tail is small."""
    _check_lambda(lam)
    if k < 0:
        return 1.0
    if k < lam:
        _, cdf = poisson_pmf_cdf(lam, k)
        return max(1.0 - cdf, 0.0)
    terms = []
    j = k + 1
    while True:
        t = math.exp(poisson_logpmf(lam, j))
        terms.append(t)
        if t < 1e-18 * terms[0] or t == 0.0:
            break
        j += 1
    return math.fsum(terms)


def poisson_quantile(lam: float, q: float) -> int:
    """Smallest ``k`` with ``cdf(k) >= q`` (forward summation)."""
    _check_lambda(lam)
    if not (0.0 <= q < 1.0):
        raise DomainError(f"quantile level must lie in [0, 1), got {q}")
    k = 0
    parts = [math.exp(poisson_logpmf(lam, 0))]
    while math.fsum(parts) < q:
        k += 1
        parts.append(math.exp(poisson_logpmf(lam, k)))
    return k


def poisson_sf_table(lam: float, kmax: int) -> np.ndarray:
    """``Pr(T > k)`` for ``k = 0..kmax`` as an array."""
    return np.array([poisson_sf(lam, k) for k in range(kmax + 1)])


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    method: str = "adaptive-semi-infinite"
    rtol: float = 1e-9
    max_subdivisions: int = 200

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError("quadrature tolerance must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


def integrate_semi_infinite(f, spec: QuadratureSpec | None = None, split: float = 1.0) -> float:
    """Integrate ``f`` over ``[0, inf)``.

    The range is split at ``split`` so the finite head and the transformed
    tail are handled by separate adaptive passes.
    """
    spec = spec or QuadratureSpec()
    total = 0.0
    for lo, hi in ((0.0, split), (split, np.inf)):
        res = integrate.quad(
            f, lo, hi, epsabs=0.0, epsrel=spec.rtol, limit=spec.max_subdivisions, full_output=1
        )
        val, err, info = res[:3]
        # quad flags roundoff too; only an exhausted subdivision budget is fatal
        if len(res) > 3 and info.get("last", 0) >= spec.max_subdivisions:
            raise ConvergenceError(
                f"quadrature on [{lo}, {hi}] exhausted {spec.max_subdivisions} subdivisions (err={err:.3g})"
            )
        total += val
    return total


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

class RandomStream:
    """Reproducible per-run random stream.

    ``(master_seed, stream_index)`` identifies the stream; distinct indices
    are spawned children of one :class:`numpy.random.SeedSequence`, so MC runs
    can be generated in any order or process and still agree.
    """

    def __init__(self, master_seed: int, stream_index: int = 0):
        if stream_index < 0:
            raise ValueError("stream_index must be non-negative")
        self.master_seed = int(master_seed)
        self.stream_index = int(stream_index)
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def uniforms(self, size) -> np.ndarray:
        return self._gen.random(size)

    def poisson(self, lam: float) -> int:
        return int(self._gen.poisson(lam))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def __repr__(self):
        return f"RandomStream(master_seed={self.master_seed}, stream_index={self.stream_index})"


# ---------------------------------------------------------------------------
# Compensated summation
# ---------------------------------------------------------------------------

def neumaier_update(s, c, z):
    """One Neumaier step on arrays; returns the new ``(sum, compensation)``."""
    t = s + z
    c = c + np.where(np.abs(s) >= np.abs(z), (s - t) + z, (z - t) + s)
    return t, c


def neumaier_cumsum(values) -> np.ndarray:
    """Running compensated sums ``[0, v0, v0+v1, ...]`` (scalar reference)."""
    s = 0.0
    c = 0.0
    out = [0.0]
    for v in values:
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out.append(s + c)
    return np.array(out)
