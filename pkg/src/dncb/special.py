"""Scalar special functions behind the DNCB likelihood and the Bessel distribution.

Everything here works in log space or with rescaled series so that large
arguments (counts in the thousands, Poisson totals up to 1e3 and beyond) do not
overflow.  The jitted kernels (leading underscore) are shared with the samplers
in :mod:`dncb.bessel` and the predictive-density code in :mod:`dncb.evaluation`.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import ConvergenceError, DomainError

# log I(v, a) switches from the peak-centred series to the large-argument
# (Hankel) expansion above this argument, provided 4 v^2 < a.
_HANKEL_MIN_A = 700.0
_QUOTIENT_MAX_ITER = 1_000_000
_QUOTIENT_TOL = 4e-16

_KUMMER_TOL = 1e-15
_KUMMER_MAX_TERMS = 100_000
_RESCALE = 1e250
_LOG_RESCALE = math.log(_RESCALE)

# Joint Poisson tail mass left out of the mixture; split over four one-sided tails.
DNCB_TAIL_MASS = 1e-12
DNCB_MAX_TERMS = 1_000_000


class KummerArgs(NamedTuple):
    """Arguments of Kummer's function M(a, b, c); ``b`` must be positive."""

    a: float
    b: float
    c: float


class MomentScenario(NamedTuple):
    """Symmetric-shape setting for the closed-form mean of a DNCB entry.

    ``b0`` is the common shape, ``zeta`` the total Poisson rate and ``rho`` the
    share of that rate on the first component.
    """

    b0: float
    zeta: float
    rho: float

    @property
    def q(self) -> float:
        return q_factor(self.b0, self.zeta)


# ---------------------------------------------------------------------------
# modified Bessel function of the first kind
# ---------------------------------------------------------------------------


@njit(cache=True)
def _bessel_mode(v, a):
    return max(0, int(math.floor((math.sqrt(v * v + a * a) - v) / 2.0)))


@njit(cache=True)
def _log_bessel_i_series(v, a):
    # Sum the power series outward from its largest term so that every partial
    # sum is O(1) relative to the peak.
    half = 0.5 * a
    q = half * half
    m = _bessel_mode(v, a)
    log_peak = (2.0 * m + v) * math.log(half) - math.lgamma(m + 1.0) - math.lgamma(m + v + 1.0)
    s = 1.0
    t = 1.0
    n = m
    while True:
        t *= q / ((n + 1.0) * (n + v + 1.0))
        s += t
        n += 1
        if t < 1e-17 * s:
            break
    t = 1.0
    n = m
    while n > 0:
        t *= n * (n + v) / q
        s += t
        n -= 1
        if t < 1e-17 * s:
            break
    return log_peak + math.log(s)


@njit(cache=True)
def _hankel_sum(v, a):
    # sum_k (-1)^k a_k(v) / a^k of the large-argument expansion
    # I_v(a) ~ e^a / sqrt(2 pi a) * sum, truncated before the terms grow
    mu = 4.0 * v * v
    s = 1.0
    term = 1.0
    for k in range(1, 200):
        nxt = -term * (mu - (2.0 * k - 1.0) ** 2) / (8.0 * k * a)
        if abs(nxt) >= abs(term):
            break
        term = nxt
        s += term
        if abs(term) < 1e-17 * abs(s):
            break
    return s


@njit(cache=True)
def _log_bessel_i_hankel(v, a):
    return a - 0.5 * math.log(2.0 * math.pi * a) + math.log(_hankel_sum(v, a))


@njit(cache=True)
def _log_bessel_i(v, a):
    if a > _HANKEL_MIN_A and 4.0 * v * v < a:
        return _log_bessel_i_hankel(v, a)
    return _log_bessel_i_series(v, a)


@njit(cache=True)
def _bessel_quotient(v, a):
    # Modified Lentz evaluation of I(v+1,a)/I(v,a) = 1/(2(v+1)/a + 1/(2(v+2)/a + ...)).
    # Returns nan when the iteration cap is hit.  The number of iterations
    # grows like sqrt(a), so large arguments with moderate order take the
    # ratio of the two large-argument expansions instead.
    if a > _HANKEL_MIN_A and 4.0 * (v + 1.0) * (v + 1.0) < a:
        return _hankel_sum(v + 1.0, a) / _hankel_sum(v, a)
    tiny = 1e-300
    f = tiny
    c = f
    d = 0.0
    for j in range(1, _QUOTIENT_MAX_ITER + 1):
        b = 2.0 * (v + j) / a
        d = b + d
        if d == 0.0:
            d = tiny
        c = b + 1.0 / c
        if c == 0.0:
            c = tiny
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < _QUOTIENT_TOL:
            return f
    return np.nan


def _check_bessel_args(v: float, a: float) -> tuple[float, float]:
    v = float(v)
    a = float(a)
    if not (v > -1.0 and math.isfinite(v)):
        raise DomainError(f"Bessel order must satisfy v > -1, got v={v}")
    if not (a > 0.0 and math.isfinite(a)):
        raise DomainError(f"Bessel argument must satisfy a > 0, got a={a}")
    return v, a


def log_bessel_i(v: float, a: float) -> float:
    """Logarithm of the modified Bessel function of the first kind, log I_v(a).

    Parameters
    ----------
    v : float
        Order, ``v > -1``.
    a : float
        Argument, ``a > 0``.

    Returns
    -------
    float
        ``log I_v(a)``, finite for every valid input.  Small and moderate
        arguments use the power series summed outward from its largest term;
        arguments above 700 with ``4 v^2 < a`` use the large-argument expansion.
    """
    v, a = _check_bessel_args(v, a)
    return float(_log_bessel_i(v, a))


def bessel_quotient(v: float, a: float) -> float:
    """Bessel quotient ``R(v, a) = I_{v+1}(a) / I_v(a)``.

    Computed from the continued fraction of the three-term recurrence, or for
    ``a > 700`` and ``4 (v+1)^2 < a`` from the ratio of the large-argument
    series, without evaluating any Bessel function.  Lies in (0, 1) for
    ``v >= -1/2``; for ``-1 < v < -1/2`` it can exceed 1.

    Raises
    ------
    ConvergenceError
        If the continued fraction needs more than 1e6 iterations, which
        happens for arguments beyond about 1e9 at large order.
    """
    v, a = _check_bessel_args(v, a)
    r = float(_bessel_quotient(v, a))
    if not math.isfinite(r):
        raise ConvergenceError(f"Bessel quotient continued fraction did not converge at v={v}, a={a}")
    return r


# ---------------------------------------------------------------------------
# Kummer's confluent hypergeometric function
# ---------------------------------------------------------------------------


def _log_series_1f1(a: float, b: float, x: float) -> tuple[float, float]:
    """log|S| and sign(S) for S = sum_n (a)_n / (b)_n x^n / n!, x > 0."""
    t = 1.0
    s = 1.0
    log_scale = 0.0
    for n in range(_KUMMER_MAX_TERMS):
        r = (a + n) / (b + n) * x / (n + 1.0)
        t *= r
        s += t
        if abs(r) < 1.0 and abs(t) < _KUMMER_TOL * abs(s):
            break
        if abs(s) > _RESCALE:
            s /= _RESCALE
            t /= _RESCALE
            log_scale += _LOG_RESCALE
    else:
        raise ConvergenceError(
            f"Kummer series did not converge within {_KUMMER_MAX_TERMS} terms (a={a}, b={b}, x={x})"
        )
    if s == 0.0:
        return -math.inf, 0.0
    return log_scale + math.log(abs(s)), math.copysign(1.0, s)


def kummer_m(a, b: float | None = None, c: float | None = None) -> float:
    """Kummer's confluent hypergeometric function M(a, b, c).

    Accepts either three numbers or a single :class:`KummerArgs`.  Negative
    arguments go through Kummer's transformation
    ``M(a, b, c) = e^c M(b - a, b, -c)`` so the series is summed at a
    positive argument and the exponential factor is applied in log space.
    """
    if isinstance(a, KummerArgs):
        a, b, c = a
    a, b, c = float(a), float(b), float(c)
    if not b > 0.0:
        raise DomainError(f"Kummer M requires b > 0, got b={b}")
    if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(c)):
        raise DomainError("Kummer M requires finite arguments")
    if c == 0.0:
        return 1.0
    if c < 0.0:
        log_s, sign = _log_series_1f1(b - a, b, -c)
        return sign * math.exp(c + log_s)
    log_s, sign = _log_series_1f1(a, b, c)
    return sign * math.exp(log_s)


def q_factor(b0: float, zeta: float) -> float:
    """Weight ``M(1, 2 b0 + 1, -zeta)`` that the mean of a DNCB entry places on 1/2."""
    if not b0 > 0.0:
        raise DomainError(f"b0 must be positive, got {b0}")
    if not zeta >= 0.0:
        raise DomainError(f"zeta must be nonnegative, got {zeta}")
    return kummer_m(1.0, 2.0 * b0 + 1.0, -zeta)


def expected_beta(s: MomentScenario) -> float:
    """Closed-form E[beta] for shapes (b0, b0) and rates (zeta*rho, zeta*(1-rho)).

    Evaluates ``0.5 M(1, 2b0+1, -zeta) + rho zeta / (2b0+1) M(1, 2b0+2, -zeta)``,
    which equals ``0.5 q + rho (1 - q)`` with ``q = q_factor(b0, zeta)``.
    """
    b0, zeta, rho = float(s.b0), float(s.zeta), float(s.rho)
    if not b0 > 0.0:
        raise DomainError(f"b0 must be positive, got {b0}")
    if not zeta >= 0.0:
        raise DomainError(f"zeta must be nonnegative, got {zeta}")
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    b = 2.0 * b0 + 1.0
    return 0.5 * kummer_m(1.0, b, -zeta) + rho * zeta / b * kummer_m(1.0, b + 1.0, -zeta)


# ---------------------------------------------------------------------------
# DNCB density
# ---------------------------------------------------------------------------


@njit(cache=True)
def _poisson_support(lam, tail):
    """Smallest [lo, hi] around the mode whose two one-sided tails are each < tail."""
    if lam <= 0.0:
        return 0, 0
    m = int(math.floor(lam))
    pm = math.exp(m * math.log(lam) - lam - math.lgamma(m + 1.0))
    hi = m
    p = pm
    while True:
        p_next = p * lam / (hi + 1.0)
        # later terms shrink at least geometrically with ratio lam / (hi + 2) < 1
        if p_next / (1.0 - lam / (hi + 2.0)) < tail:
            break
        p = p_next
        hi += 1
    lo = m
    p = pm
    while lo > 0:
        p_next = p * lo / lam
        if p_next / (1.0 - (lo - 1.0) / lam) < tail:
            break
        p = p_next
        lo -= 1
    return lo, hi


@njit(cache=True)
def _dncb_logpdf(beta, e1, e2, l1, l2, max_terms):
    """log DNCB density via the Poisson x Poisson mixture of beta densities.

    Returns nan if the truncated grid would exceed ``max_terms`` cells.
    """
    tail = 0.25 * DNCB_TAIL_MASS
    lo1, hi1 = _poisson_support(l1, tail)
    lo2, hi2 = _poisson_support(l2, tail)
    n1 = hi1 - lo1 + 1
    n2 = hi2 - lo2 + 1
    if n1 * n2 > max_terms:
        return np.nan
    lb = math.log(beta)
    lb1 = math.log1p(-beta)
    ll1 = math.log(l1) if l1 > 0.0 else 0.0
    ll2 = math.log(l2) if l2 > 0.0 else 0.0
    A = np.empty(n1)
    for i in range(n1):
        y = lo1 + i
        A[i] = y * ll1 - l1 - math.lgamma(y + 1.0) + (e1 + y - 1.0) * lb - math.lgamma(e1 + y)
    B = np.empty(n2)
    for i in range(n2):
        y = lo2 + i
        B[i] = y * ll2 - l2 - math.lgamma(y + 1.0) + (e2 + y - 1.0) * lb1 - math.lgamma(e2 + y)
    G = np.empty(n1 + n2 - 1)
    es = e1 + e2
    for i in range(n1 + n2 - 1):
        G[i] = math.lgamma(es + lo1 + lo2 + i)
    mx = -np.inf
    for i in range(n1):
        for j in range(n2):
            t = A[i] + B[j] + G[i + j]
            if t > mx:
                mx = t
    if mx == -np.inf:
        return -np.inf
    s = 0.0
    for i in range(n1):
        for j in range(n2):
            s += math.exp(A[i] + B[j] + G[i + j] - mx)
    return mx + math.log(s)


@njit(cache=True)
def _dncb_logpdf_many(beta, e1, e2, l1, l2, max_terms):
    out = np.empty(beta.shape[0])
    for n in range(beta.shape[0]):
        out[n] = _dncb_logpdf(beta[n], e1, e2, l1[n], l2[n], max_terms)
    return out


def dncb_log_pdf(beta, eps1: float, eps2: float, lam1, lam2):
    """Log density of the doubly non-central beta distribution.

    The density is the Poisson(lam1) x Poisson(lam2) mixture of
    Beta(eps1 + y1, eps2 + y2) densities.  Terms are summed in log space over
    the smallest rectangle of counts that leaves out less than 1e-12 of the
    joint Poisson mass.

    ``beta``, ``lam1`` and ``lam2`` broadcast against each other; scalars in,
    scalar out.

    Raises
    ------
    DomainError
        If any ``beta`` lies outside (0, 1), a shape is not positive or a rate
        is negative.
    ConvergenceError
        If the truncated mixture would need more than 1e6 terms.
    """
    eps1, eps2 = float(eps1), float(eps2)
    if not (eps1 > 0.0 and eps2 > 0.0):
        raise DomainError(f"shape parameters must be positive, got ({eps1}, {eps2})")
    b, l1, l2 = np.broadcast_arrays(
        np.asarray(beta, dtype=float), np.asarray(lam1, dtype=float), np.asarray(lam2, dtype=float)
    )
    if not np.all((b > 0.0) & (b < 1.0)):
        raise DomainError("beta must lie strictly inside (0, 1)")
    if not (np.all(l1 >= 0.0) and np.all(l2 >= 0.0) and np.all(np.isfinite(l1)) and np.all(np.isfinite(l2))):
        raise DomainError("non-centrality parameters must be finite and nonnegative")
    shape = b.shape
    out = _dncb_logpdf_many(
        np.ascontiguousarray(b.ravel()), eps1, eps2,
        np.ascontiguousarray(l1.ravel()), np.ascontiguousarray(l2.ravel()), DNCB_MAX_TERMS,
    )
    if np.isnan(out).any():
        raise ConvergenceError(
            f"DNCB mixture truncation exceeds {DNCB_MAX_TERMS} terms; non-centrality too large"
        )
    if shape == ():
        return float(out[0])
    return out.reshape(shape)
