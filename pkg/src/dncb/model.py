"""Data containers and the two generative models (DNCB-MF and DNCB-TD)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np

from .errors import DomainError

ModelKind = Literal["mf", "td"]

CLAMP_DELTA = 1e-6
# Gamma draws with tiny shape can underflow to exactly zero; factors are kept
# strictly positive.
_TINY = np.finfo(float).tiny


def positive_gamma(rng: np.random.Generator, shape, rate) -> np.ndarray:
    """Gamma(shape, rate) draws floored at the smallest positive normal double."""
    return np.maximum(rng.standard_gamma(shape) / rate, _TINY)


@dataclass
class BoundedMatrix:
    """Observed I x J matrix of values in (0, 1).

    ``mask`` is True where an entry is observed.  Values at unobserved entries
    are carried along but never read by inference.  Construction clamps
    observed values into ``[delta, 1 - delta]``; ``n_clamped`` records how many
    were moved.
    """

    values: np.ndarray
    mask: np.ndarray | None = None
    row_labels: list[str] | None = None
    col_labels: list[str] | None = None
    delta: float = CLAMP_DELTA
    n_clamped: int = field(init=False, default=0)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DomainError(f"expected a nonempty 2-d matrix, got shape {values.shape}")
        mask = np.ones(values.shape, dtype=bool) if self.mask is None else np.array(self.mask, dtype=bool)
        if mask.shape != values.shape:
            raise DomainError("mask shape does not match values")
        if np.any(~np.isfinite(values[mask])):
            raise DomainError("observed values must be finite")
        lo, hi = self.delta, 1.0 - self.delta
        outside = mask & ((values < lo) | (values > hi))
        self.n_clamped = int(outside.sum())
        values[mask] = np.clip(values[mask], lo, hi)
        hidden = values[~mask]
        # unobserved entries carry a placeholder inside the support
        values[~mask] = np.where(np.isfinite(hidden), np.clip(hidden, lo, hi), 0.5)
        self.values = values
        self.mask = mask
        if self.row_labels is not None and len(self.row_labels) != values.shape[0]:
            raise DomainError("row label count does not match rows")
        if self.col_labels is not None and len(self.col_labels) != values.shape[1]:
            raise DomainError("column label count does not match columns")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_mask(self, observed: np.ndarray) -> "BoundedMatrix":
        """Copy with a new observation mask (True = observed)."""
        return BoundedMatrix(self.values, observed, self.row_labels, self.col_labels, self.delta)


@dataclass(frozen=True)
class DncbParams:
    """Shape parameters and per-column gamma rates c_j (scalar broadcasts)."""

    eps1: float
    eps2: float
    col_rates: Union[float, np.ndarray] = 1.0

    def __post_init__(self):
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise DomainError(f"shape parameters must be positive, got ({self.eps1}, {self.eps2})")
        if np.any(np.asarray(self.col_rates) <= 0):
            raise DomainError("column rates must be positive")

    def rates(self, J: int) -> np.ndarray:
        c = np.asarray(self.col_rates, dtype=float)
        if c.ndim == 0:
            return np.full(J, float(c))
        if c.shape != (J,):
            raise DomainError(f"expected {J} column rates, got {c.shape}")
        return c.copy()


@dataclass(frozen=True)
class Hyperparams:
    """Gamma prior shapes/rates: (eta1, eta2) for sample factors, (nu1, nu2) for
    feature factors, (zeta1, zeta2) for the core matrices."""

    eta1: float = 1.0
    eta2: float = 1.0
    nu1: float = 1.0
    nu2: float = 1.0
    zeta1: float = 1.0
    zeta2: float = 1.0

    def __post_init__(self):
        for name in ("eta1", "eta2", "nu1", "nu2", "zeta1", "zeta2"):
            if not getattr(self, name) > 0:
                raise DomainError(f"hyperparameter {name} must be positive")


@dataclass
class MfFactors:
    theta1: np.ndarray  # I x K
    theta2: np.ndarray  # I x K
    phi: np.ndarray  # K x J

    kind = "mf"

    def __post_init__(self):
        if self.theta1.shape != self.theta2.shape or self.theta1.shape[1] != self.phi.shape[0]:
            raise DomainError(
                f"dimension mismatch: theta1 {self.theta1.shape}, theta2 {self.theta2.shape}, phi {self.phi.shape}"
            )

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    @property
    def rho(self) -> np.ndarray:
        return self.theta1 / (self.theta1 + self.theta2)

    def copy(self) -> "MfFactors":
        return MfFactors(self.theta1.copy(), self.theta2.copy(), self.phi.copy())


@dataclass
class TdFactors:
    theta: np.ndarray  # I x C
    phi: np.ndarray  # K x J
    pi1: np.ndarray  # C x K
    pi2: np.ndarray  # C x K

    kind = "td"

    def __post_init__(self):
        C, K = self.pi1.shape
        if self.pi2.shape != (C, K) or self.theta.shape[1] != C or self.phi.shape[0] != K:
            raise DomainError(
                f"dimension mismatch: theta {self.theta.shape}, pi1 {self.pi1.shape}, "
                f"pi2 {self.pi2.shape}, phi {self.phi.shape}"
            )

    @property
    def C(self) -> int:
        return self.theta.shape[1]

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    def copy(self) -> "TdFactors":
        return TdFactors(self.theta.copy(), self.phi.copy(), self.pi1.copy(), self.pi2.copy())


Factors = Union[MfFactors, TdFactors]


@dataclass
class Subcounts:
    """Latent subcounts stored only for entries with a nonzero total count.

    For each component t in {1, 2}: ``index[t]`` is an (N_t, 2) array of (i, j)
    and ``counts[t]`` an (N_t, C, K) array for TD or (N_t, K) for MF.
    """

    index1: np.ndarray
    counts1: np.ndarray
    index2: np.ndarray
    counts2: np.ndarray

    def pair(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        if t == 1:
            return self.index1, self.counts1
        if t == 2:
            return self.index2, self.counts2
        raise ValueError("t must be 1 or 2")

    def totals(self, t: int, shape: tuple[int, int]) -> np.ndarray:
        """Dense I x J matrix of per-entry subcount sums."""
        idx, cnt = self.pair(t)
        out = np.zeros(shape, dtype=np.int64)
        out[idx[:, 0], idx[:, 1]] = cnt.reshape(len(cnt), -1).sum(axis=1)
        return out

    def as_dict(self) -> dict[tuple, int]:
        """Sparse map (i, j, c, k, t) -> count (MF keys omit c)."""
        out = {}
        for t in (1, 2):
            idx, cnt = self.pair(t)
            for n, (i, j) in enumerate(idx):
                block = cnt[n]
                for pos in zip(*np.nonzero(block)):
                    out[(int(i), int(j), *map(int, pos), t)] = int(block[pos])
        return out


@dataclass
class AugmentedState:
    """Latent counts y, gamma variables and subcounts of the augmented model."""

    y1: np.ndarray
    y2: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    subcounts: Subcounts | None = None

    def copy(self) -> "AugmentedState":
        sc = self.subcounts
        if sc is not None:
            sc = Subcounts(sc.index1.copy(), sc.counts1.copy(), sc.index2.copy(), sc.counts2.copy())
        return AugmentedState(self.y1.copy(), self.y2.copy(), self.gamma1.copy(), self.gamma2.copy(), sc)

    def imputed_beta(self) -> np.ndarray:
        """gamma1 / (gamma1 + gamma2); equals the data at observed entries."""
        return self.gamma1 / (self.gamma1 + self.gamma2)


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------


def compose_rates_mf(f: MfFactors) -> tuple[np.ndarray, np.ndarray]:
    """lambda^(t) = Theta^(t) Phi."""
    if f.theta1.shape[1] != f.phi.shape[0] or f.theta2.shape != f.theta1.shape:
        raise DomainError("dimension mismatch between sample and feature factors")
    return f.theta1 @ f.phi, f.theta2 @ f.phi


def compose_rates_td(f: TdFactors) -> tuple[np.ndarray, np.ndarray]:
    """lambda^(t) = Theta Pi^(t) Phi."""
    if f.theta.shape[1] != f.pi1.shape[0] or f.pi1.shape[1] != f.phi.shape[0] or f.pi2.shape != f.pi1.shape:
        raise DomainError("dimension mismatch between factor matrices")
    return f.theta @ (f.pi1 @ f.phi), f.theta @ (f.pi2 @ f.phi)


def compose_rates(f: Factors) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(f, TdFactors):
        return compose_rates_td(f)
    return compose_rates_mf(f)


# ---------------------------------------------------------------------------
# generative simulation
# ---------------------------------------------------------------------------


def sample_dncb(eps1, eps2, lam1, lam2, rng: np.random.Generator, size=None, c=1.0) -> np.ndarray:
    """Forward draws from DNCB(eps1, eps2, lam1, lam2) through the augmentation.

    y_t ~ Poisson(lam_t), gamma_t ~ Gamma(eps_t + y_t, c), beta = gamma_1 / (gamma_1 + gamma_2).
    """
    y1 = rng.poisson(lam1, size=size)
    y2 = rng.poisson(lam2, size=size)
    g1 = rng.standard_gamma(eps1 + y1) / c
    g2 = rng.standard_gamma(eps2 + y2) / c
    return g1 / (g1 + g2)


def sample_prior_mf(h: Hyperparams, I: int, K: int, J: int, rng: np.random.Generator) -> MfFactors:
    phi = positive_gamma(rng, np.full((K, J), h.nu1), h.nu2)
    theta1 = positive_gamma(rng, np.full((I, K), h.eta1), h.eta2)
    theta2 = positive_gamma(rng, np.full((I, K), h.eta1), h.eta2)
    return MfFactors(theta1, theta2, phi)


def sample_prior_td(h: Hyperparams, I: int, C: int, K: int, J: int, rng: np.random.Generator) -> TdFactors:
    pi1 = positive_gamma(rng, np.full((C, K), h.zeta1), h.zeta2)
    pi2 = positive_gamma(rng, np.full((C, K), h.zeta1), h.zeta2)
    phi = positive_gamma(rng, np.full((K, J), h.nu1), h.nu2)
    theta = positive_gamma(rng, np.full((I, C), h.eta1), h.eta2)
    return TdFactors(theta, phi, pi1, pi2)


def _simulate_observations(factors: Factors, d: DncbParams, rng, zero_rates: bool):
    from .gibbs import allocate_subcounts  # circular at import time otherwise

    lam1, lam2 = compose_rates(factors)
    if zero_rates:
        lam1 = np.zeros_like(lam1)
        lam2 = np.zeros_like(lam2)
    c = d.rates(lam1.shape[1])
    y1 = rng.poisson(lam1)
    y2 = rng.poisson(lam2)
    g1 = np.maximum(rng.standard_gamma(d.eps1 + y1) / c, _TINY)
    g2 = np.maximum(rng.standard_gamma(d.eps2 + y2) / c, _TINY)
    beta = g1 / (g1 + g2)
    state = AugmentedState(y1.astype(np.int64), y2.astype(np.int64), g1, g2)
    state.subcounts = allocate_subcounts(state, factors, rng)
    return state, BoundedMatrix(beta)


def simulate_mf(h: Hyperparams, d: DncbParams, dims: tuple[int, int, int], rng: np.random.Generator,
                zero_rates: bool = False):
    """Draw (factors, augmented state, data) from the DNCB-MF generative model.

    ``dims`` is (I, K, J).  ``zero_rates`` forces lambda = 0 so every entry is
    a plain Beta(eps1, eps2) draw; it exists for testing.
    """
    I, K, J = dims
    if min(dims) < 1:
        raise DomainError(f"dimensions must be positive, got {dims}")
    factors = sample_prior_mf(h, I, K, J, rng)
    state, data = _simulate_observations(factors, d, rng, zero_rates)
    return factors, state, data


def simulate_td(h: Hyperparams, d: DncbParams, dims: tuple[int, int, int, int], rng: np.random.Generator,
                zero_rates: bool = False):
    """Draw (factors, augmented state, data) from the DNCB-TD generative model.

    ``dims`` is (I, C, K, J).  Pi is drawn first, then Phi, then Theta.
    """
    I, C, K, J = dims
    if min(dims) < 1:
        raise DomainError(f"dimensions must be positive, got {dims}")
    factors = sample_prior_td(h, I, C, K, J, rng)
    state, data = _simulate_observations(factors, d, rng, zero_rates)
    return factors, state, data


@dataclass(frozen=True)
class ModelSpec:
    """Model kind with its latent dimensions and parameters.

    ``C`` is the number of sample clusters and is ignored for MF.
    """

    kind: str
    K: int
    params: DncbParams
    hyper: Hyperparams = field(default_factory=Hyperparams)
    C: int | None = None

    def __post_init__(self):
        if self.kind not in ("mf", "td"):
            raise DomainError(f"model kind must be 'mf' or 'td', got {self.kind!r}")
        if self.K < 1:
            raise DomainError("K must be at least 1")
        if self.kind == "td" and (self.C is None or self.C < 1):
            raise DomainError("td model needs C >= 1")

    def sample_prior(self, I: int, J: int, rng: np.random.Generator) -> Factors:
        if self.kind == "td":
            return sample_prior_td(self.hyper, I, self.C, self.K, J, rng)
        return sample_prior_mf(self.hyper, I, self.K, J, rng)
