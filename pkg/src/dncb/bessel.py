"""The Bessel distribution Bes(v, a) on {0, 1, 2, ...}.

``p(y) = (a/2)^(2y+v) / (I_v(a) y! Gamma(y+v+1))`` for ``v > -1`` and ``a > 0``;
``a = 0`` is treated as a point mass at zero.  It is the conditional law of a
Poisson count given the gamma variable whose shape it increments, which is
exactly the count update of the Gibbs sampler.

Samplers
--------
``table``
    Exact inversion of the probability table built from the mode outward with
    the ratio recurrence ``p(y+1)/p(y) = (a/2)^2 / ((y+1)(y+v+1))``.  No
    special functions per draw.
``devroye_rejection``
    Devroye's rejection sampler for discrete log-concave laws.  Needs the
    normalised mass at the mode and therefore ``log I_v(a)``.
``quotient_rejection``
    The same rejection envelope driven by a lower bound on the modal mass
    derived from the variance.  The variance comes from Bessel quotients, so
    no Bessel function is evaluated.
``gaussian_approx``
    Normal approximation with matched mean and variance, rounded to the
    nearest nonnegative integer.  Approximate.
``auto``
    ``table`` while the mode is below 50, ``quotient_rejection`` beyond
    (falling back to ``devroye_rejection`` where the quotient is unavailable);
    ``gaussian_approx`` only above a mode of 1e4 and only when approximate
    draws are explicitly allowed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import gammaln

from .errors import ConvergenceError, DomainError, MethodUnavailableError
from .special import _bessel_mode, _bessel_quotient, _log_bessel_i, bessel_quotient, log_bessel_i

TABLE_MODE_LIMIT = 50
GAUSSIAN_MODE_LIMIT = 1e4
TABLE_MAX_LENGTH = 1_000_000
# relative weight below which the table is cut off
_TABLE_EPS = 1e-17


class SamplerMethod(str, enum.Enum):
    DEVROYE_REJECTION = "devroye_rejection"
    QUOTIENT_REJECTION = "quotient_rejection"
    GAUSSIAN_APPROX = "gaussian_approx"
    TABLE = "table"
    AUTO = "auto"


EXACT_METHODS = (SamplerMethod.TABLE, SamplerMethod.DEVROYE_REJECTION, SamplerMethod.QUOTIENT_REJECTION)

_CODES = {
    SamplerMethod.AUTO: 0,
    SamplerMethod.TABLE: 1,
    SamplerMethod.DEVROYE_REJECTION: 2,
    SamplerMethod.QUOTIENT_REJECTION: 3,
    SamplerMethod.GAUSSIAN_APPROX: 4,
}


@dataclass(frozen=True)
class BesselParams:
    v: float
    a: float

    def __post_init__(self):
        if not (math.isfinite(self.v) and self.v > -1.0):
            raise DomainError(f"Bessel order must satisfy v > -1, got {self.v}")
        if not (math.isfinite(self.a) and self.a >= 0.0):
            raise DomainError(f"Bessel argument must satisfy a >= 0, got {self.a}")


def bessel_mode(p: BesselParams) -> int:
    """Mode ``floor((sqrt(a^2 + v^2) - v) / 2)``; 0 when a = 0."""
    if p.a == 0.0:
        return 0
    return int(_bessel_mode(p.v, p.a))


def bessel_log_pmf(y, p: BesselParams):
    """Log probability mass at ``y`` (scalar or integer array)."""
    if not p.a > 0.0:
        raise DomainError("bessel_log_pmf needs a > 0; a = 0 is the point mass at 0")
    y = np.asarray(y)
    if np.any(y < 0) or not np.all(np.equal(np.mod(y, 1), 0)):
        raise DomainError("y must be a nonnegative integer")
    yf = y.astype(float)
    out = (2.0 * yf + p.v) * math.log(p.a / 2.0) - gammaln(yf + 1.0) - gammaln(yf + p.v + 1.0)
    out = out - log_bessel_i(p.v, p.a)
    return float(out) if out.ndim == 0 else out


def bessel_mean(p: BesselParams) -> float:
    if p.a == 0.0:
        return 0.0
    return 0.5 * p.a * bessel_quotient(p.v, p.a)


def bessel_variance(p: BesselParams) -> float:
    if p.a == 0.0:
        return 0.0
    r0 = bessel_quotient(p.v, p.a)
    r1 = bessel_quotient(p.v + 1.0, p.a)
    mu = 0.5 * p.a * r0
    # E[y(y-1)] = (a/2)^2 I_{v+2}/I_v = mu (a/2) R(v+1, a)
    return max(mu * (1.0 + 0.5 * p.a * (r1 - r0)), 0.0)


# ---------------------------------------------------------------------------
# jitted kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _log_ratio_to_mode(k, m, v, a):
    """log p(k) - log p(m)."""
    return (
        2.0 * (k - m) * math.log(0.5 * a)
        - (math.lgamma(k + 1.0) - math.lgamma(m + 1.0))
        - (math.lgamma(k + v + 1.0) - math.lgamma(m + v + 1.0))
    )


@njit(cache=True)
def _table_bounds(v, a, m):
    q = 0.25 * a * a
    w = 1.0
    total = 1.0
    hi = m
    while True:
        w *= q / ((hi + 1.0) * (hi + v + 1.0))
        if w < _TABLE_EPS * total:
            break
        total += w
        hi += 1
    w = 1.0
    lo = m
    w_lo = 1.0
    while lo > 0:
        w *= lo * (lo + v) / q
        if w < _TABLE_EPS * total:
            break
        total += w
        lo -= 1
        w_lo = w
    return lo, hi, w_lo, total


@njit(cache=True)
def _sample_table(v, a, rng):
    m = _bessel_mode(v, a)
    lo, hi, w, total = _table_bounds(v, a, m)
    q = 0.25 * a * a
    u = rng.random() * total
    k = lo
    acc = w
    while acc < u and k < hi:
        w *= q / ((k + 1.0) * (k + v + 1.0))
        k += 1
        acc += w
    return k


@njit(cache=True)
def _rejection_loop(v, a, m, pm, rng):
    # Envelope for a discrete log-concave law with mode m and modal mass at
    # least pm: p(m+k)/p(m) <= min(1, exp(1 - pm |k|)).
    w = 1.0 + 0.5 * pm
    split = w / (1.0 + w)
    while True:
        u = rng.random()
        ww = rng.random()
        s = 1 if rng.random() < 0.5 else -1
        if u <= split:
            y = rng.random() * w / pm
        else:
            y = (w + rng.standard_exponential()) / pm
        k = m + s * int(math.floor(y + 0.5))
        if k < 0:
            continue
        bound = 1.0 if y * pm <= w else math.exp(w - pm * y)
        if ww * bound <= math.exp(_log_ratio_to_mode(k, m, v, a)):
            return k


@njit(cache=True)
def _sample_devroye(v, a, rng):
    m = _bessel_mode(v, a)
    log_pm = (2.0 * m + v) * math.log(0.5 * a) - math.lgamma(m + 1.0) - math.lgamma(m + v + 1.0)
    pm = math.exp(log_pm - _log_bessel_i(v, a))
    return _rejection_loop(v, a, m, min(pm, 1.0), rng)


@njit(cache=True)
def _moments(v, a):
    r0 = _bessel_quotient(v, a)
    r1 = _bessel_quotient(v + 1.0, a)
    mu = 0.5 * a * r0
    var = mu * (1.0 + 0.5 * a * (r1 - r0))
    if math.isnan(var):
        return mu, var
    return mu, max(var, 0.0)


@njit(cache=True)
def _modal_mass_lower_bound(sd):
    # Chebyshev: at least 2/3 of the mass sits in an interval of half-width
    # sqrt(3) sd, which holds at most floor(2 sqrt(3) sd) + 1 integers.
    return (2.0 / 3.0) / (math.floor(2.0 * math.sqrt(3.0) * sd * (1.0 + 1e-9)) + 1.0)


@njit(cache=True)
def _sample_quotient(v, a, rng):
    m = _bessel_mode(v, a)
    mu, var = _moments(v, a)
    if not math.isfinite(var):
        # quotient unavailable at this (v, a); auto falls back to Devroye
        return _sample_devroye(v, a, rng)
    return _rejection_loop(v, a, m, _modal_mass_lower_bound(math.sqrt(var)), rng)


@njit(cache=True)
def _sample_gaussian(v, a, rng):
    mu, var = _moments(v, a)
    if not math.isfinite(var):
        return _sample_devroye(v, a, rng)
    y = math.floor(mu + math.sqrt(var) * rng.standard_normal() + 0.5)
    return int(max(y, 0.0))


@njit(cache=True)
def _sample_one(v, a, code, allow_approx, rng):
    if a <= 0.0:
        return 0
    if code == 0:
        m = _bessel_mode(v, a)
        if m < TABLE_MODE_LIMIT:
            return _sample_table(v, a, rng)
        if allow_approx and m > GAUSSIAN_MODE_LIMIT:
            return _sample_gaussian(v, a, rng)
        return _sample_quotient(v, a, rng)
    if code == 1:
        return _sample_table(v, a, rng)
    if code == 2:
        return _sample_devroye(v, a, rng)
    if code == 3:
        return _sample_quotient(v, a, rng)
    return _sample_gaussian(v, a, rng)


@njit(cache=True)
def _sample_many(v, a, code, allow_approx, n, rng):
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _sample_one(v, a, code, allow_approx, rng)
    return out


def _check_method(p: BesselParams, method: SamplerMethod) -> None:
    if p.a == 0.0 or method is SamplerMethod.AUTO:
        return
    if method is SamplerMethod.TABLE:
        # the table spans roughly +-9 sd around the mode
        sd = math.sqrt(max(bessel_variance(p), 1.0))
        if 20.0 * sd > TABLE_MAX_LENGTH:
            raise MethodUnavailableError(f"probability table too long for a={p.a}, v={p.v}")
    elif method is SamplerMethod.DEVROYE_REJECTION:
        if not math.isfinite(log_bessel_i(p.v, p.a)):
            raise MethodUnavailableError(f"log I_v(a) not finite at a={p.a}, v={p.v}")
    else:
        try:
            bessel_variance(p)
        except ConvergenceError as exc:
            raise MethodUnavailableError(f"Bessel quotient unavailable at a={p.a}, v={p.v}") from exc


def sample_bessel(
    p: BesselParams,
    method: SamplerMethod | str = SamplerMethod.AUTO,
    rng: np.random.Generator | None = None,
    size: int | None = None,
    allow_approx: bool = False,
):
    """Draw from Bes(v, a).

    Parameters
    ----------
    p : BesselParams
    method : SamplerMethod or str
        One of the module-level samplers; ``auto`` never raises.
    rng : numpy.random.Generator
        Random stream; advanced in place.
    size : int, optional
        Number of draws.  ``None`` returns a single int.
    allow_approx : bool
        Let ``auto`` use the Gaussian approximation for very large modes.
    """
    method = SamplerMethod(method)
    if rng is None:
        rng = np.random.default_rng()
    _check_method(p, method)
    code = _CODES[method]
    if size is None:
        return int(_sample_one(float(p.v), float(p.a), code, allow_approx, rng))
    return _sample_many(float(p.v), float(p.a), code, allow_approx, int(size), rng)
