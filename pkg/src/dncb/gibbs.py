"""Augmented Gibbs sampler for DNCB-MF and DNCB-TD.

One sweep updates, in order: gamma totals, latent counts, subcounts, then the
factors (Theta, Phi, Pi).  Every update function mutates its first argument in
place and also returns it.

Held-out (masked) entries are handled by drawing their counts and gammas from
the generative conditionals given the current rates: ``y ~ Pois(lambda)`` and
``gamma ~ Gam(eps + y, c)``.  The masked data values are never read, and the
number of random draws per sweep depends only on the mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .bessel import _sample_one
from .errors import DomainError
from .model import (
    AugmentedState,
    BoundedMatrix,
    DncbParams,
    Factors,
    Hyperparams,
    MfFactors,
    Subcounts,
    TdFactors,
    compose_rates,
    positive_gamma,
    sample_prior_mf,
    sample_prior_td,
)

_TINY = np.finfo(float).tiny


# ---------------------------------------------------------------------------
# gammas
# ---------------------------------------------------------------------------


def gibbs_sample_gammas(state: AugmentedState, data: BoundedMatrix, d: DncbParams,
                        rng: np.random.Generator) -> AugmentedState:
    """Redraw gamma totals at observed entries and split them by beta.

    gamma_tot ~ Gam(eps1 + eps2 + y1 + y2, c_j); gamma1 = beta * gamma_tot and
    gamma2 = (1 - beta) * gamma_tot.  Masked entries are left untouched.
    """
    obs = data.mask
    c = d.rates(data.shape[1])
    cols = np.broadcast_to(c, data.shape)[obs]
    shape = d.eps1 + d.eps2 + state.y1[obs] + state.y2[obs]
    total = np.maximum(rng.standard_gamma(shape) / cols, _TINY)
    beta = data.values[obs]
    state.gamma1[obs] = beta * total
    state.gamma2[obs] = (1.0 - beta) * total
    return state


# ---------------------------------------------------------------------------
# counts
# ---------------------------------------------------------------------------


@njit(cache=True)
def _count_kernel(y1, y2, g1, g2, lam1, lam2, mask, c, eps1, eps2, allow_approx, rng):
    I, J = y1.shape
    for i in range(I):
        for j in range(J):
            cj = c[j]
            if mask[i, j]:
                y1[i, j] = _sample_one(eps1 - 1.0, 2.0 * np.sqrt(cj * g1[i, j] * lam1[i, j]), 0, allow_approx, rng)
                y2[i, j] = _sample_one(eps2 - 1.0, 2.0 * np.sqrt(cj * g2[i, j] * lam2[i, j]), 0, allow_approx, rng)
            else:
                n1 = rng.poisson(lam1[i, j])
                n2 = rng.poisson(lam2[i, j])
                y1[i, j] = n1
                y2[i, j] = n2
                g1[i, j] = max(rng.standard_gamma(eps1 + n1) / cj, 2.2250738585072014e-308)
                g2[i, j] = max(rng.standard_gamma(eps2 + n2) / cj, 2.2250738585072014e-308)


def gibbs_sample_counts(state: AugmentedState, rates: tuple[np.ndarray, np.ndarray], d: DncbParams,
                        rng: np.random.Generator, mask: np.ndarray | None = None,
                        allow_approx: bool = False) -> AugmentedState:
    """Draw y_t ~ Bes(eps_t - 1, 2 sqrt(c_j gamma_t lambda_t)) at observed entries.

    ``mask`` marks observed entries (default: all).  Masked entries get
    ``y ~ Pois(lambda)`` and fresh gammas given y.
    """
    lam1, lam2 = rates
    I, J = state.y1.shape
    if mask is None:
        mask = np.ones((I, J), dtype=bool)
    c = d.rates(J)
    _count_kernel(state.y1, state.y2, state.gamma1, state.gamma2,
                  np.ascontiguousarray(lam1, dtype=float), np.ascontiguousarray(lam2, dtype=float),
                  np.ascontiguousarray(mask), c, float(d.eps1), float(d.eps2), allow_approx, rng)
    return state


# ---------------------------------------------------------------------------
# subcount allocation
# ---------------------------------------------------------------------------


@njit(cache=True)
def _multinomial_into(n, w, out, rng):
    """Multinomial(n, w / sum(w)) as sequential binomials; adds into ``out``."""
    m = w.shape[0]
    suffix = np.empty(m + 1)
    suffix[m] = 0.0
    for r in range(m - 1, -1, -1):
        suffix[r] = suffix[r + 1] + w[r]
    left = n
    for r in range(m - 1):
        if left == 0:
            return
        if suffix[r] <= 0.0:
            return
        p = w[r] / suffix[r]
        if p >= 1.0:
            out[r] += left
            return
        draw = rng.binomial(left, p)
        out[r] += draw
        left -= draw
    out[m - 1] += left


@njit(cache=True)
def _nonzero_index(y):
    I, J = y.shape
    n = 0
    for i in range(I):
        for j in range(J):
            if y[i, j] > 0:
                n += 1
    idx = np.empty((n, 2), dtype=np.int64)
    n = 0
    for i in range(I):
        for j in range(J):
            if y[i, j] > 0:
                idx[n, 0] = i
                idx[n, 1] = j
                n += 1
    return idx


@njit(cache=True)
def _allocate_mf(y, theta, phi, rng):
    idx = _nonzero_index(y)
    K = phi.shape[0]
    counts = np.zeros((idx.shape[0], K), dtype=np.int64)
    w = np.empty(K)
    for n in range(idx.shape[0]):
        i = idx[n, 0]
        j = idx[n, 1]
        for k in range(K):
            w[k] = theta[i, k] * phi[k, j]
        _multinomial_into(y[i, j], w, counts[n], rng)
    return idx, counts


@njit(cache=True)
def _allocate_td(y, theta, pi, phi, psi, rng):
    # p(c, k) = theta_ic pi_ck phi_kj / rho_ij factorises as p(c) p(k | c) with
    # p(c) proportional to theta_ic psi_cj, psi = Pi Phi.
    idx = _nonzero_index(y)
    C, K = pi.shape
    counts = np.zeros((idx.shape[0], C, K), dtype=np.int64)
    wc = np.empty(C)
    nc = np.zeros(C, dtype=np.int64)
    wk = np.empty(K)
    for n in range(idx.shape[0]):
        i = idx[n, 0]
        j = idx[n, 1]
        for cc in range(C):
            wc[cc] = theta[i, cc] * psi[cc, j]
            nc[cc] = 0
        _multinomial_into(y[i, j], wc, nc, rng)
        for cc in range(C):
            if nc[cc] == 0:
                continue
            for k in range(K):
                wk[k] = pi[cc, k] * phi[k, j]
            _multinomial_into(nc[cc], wk, counts[n, cc], rng)
    return idx, counts


def allocate_subcounts(state: AugmentedState, f: Factors, rng: np.random.Generator) -> Subcounts:
    """Multinomial split of every nonzero count over latent (c, k) or k cells."""
    out = []
    if isinstance(f, TdFactors):
        for y, pi in ((state.y1, f.pi1), (state.y2, f.pi2)):
            out.extend(_allocate_td(y, f.theta, pi, f.phi, pi @ f.phi, rng))
    else:
        for y, theta in ((state.y1, f.theta1), (state.y2, f.theta2)):
            out.extend(_allocate_mf(y, theta, f.phi, rng))
    return Subcounts(*out)


def gibbs_allocate_subcounts(state: AugmentedState, f: Factors, rng: np.random.Generator) -> AugmentedState:
    state.subcounts = allocate_subcounts(state, f, rng)
    return state


# ---------------------------------------------------------------------------
# factor updates
# ---------------------------------------------------------------------------


def subcount_sums_mf(sc: Subcounts, I: int, K: int, J: int):
    """Sufficient statistics: per-t (I, K) sums over j and the (K, J) sum over i, t."""
    row = []
    col = np.zeros((K, J))
    for t in (1, 2):
        idx, cnt = sc.pair(t)
        r = np.zeros((I, K))
        np.add.at(r, idx[:, 0], cnt)
        np.add.at(col.T, idx[:, 1], cnt)
        row.append(r)
    return row[0], row[1], col


def subcount_sums_td(sc: Subcounts, I: int, C: int, K: int, J: int):
    """Sufficient statistics: (I, C) over j, k, t; (K, J) over i, c, t; per-t (C, K) over i, j."""
    theta_s = np.zeros((I, C))
    phi_s = np.zeros((K, J))
    core = []
    for t in (1, 2):
        idx, cnt = sc.pair(t)
        np.add.at(theta_s, idx[:, 0], cnt.sum(axis=2))
        np.add.at(phi_s.T, idx[:, 1], cnt.sum(axis=1))
        core.append(cnt.sum(axis=0).astype(float))
    return theta_s, phi_s, core[0], core[1]


def gibbs_update_factors_mf(state: AugmentedState, f: MfFactors, h: Hyperparams,
                            rng: np.random.Generator) -> MfFactors:
    """Conjugate gamma updates: Theta(1), Theta(2), then Phi."""
    I, K = f.theta1.shape
    J = f.phi.shape[1]
    s1, s2, sphi = subcount_sums_mf(state.subcounts, I, K, J)
    rate_theta = h.eta2 + f.phi.sum(axis=1)
    f.theta1 = positive_gamma(rng, h.eta1 + s1, rate_theta)
    f.theta2 = positive_gamma(rng, h.eta1 + s2, rate_theta)
    rate_phi = h.nu2 + (f.theta1 + f.theta2).sum(axis=0)
    f.phi = positive_gamma(rng, h.nu1 + sphi, rate_phi[:, None])
    return f


def gibbs_update_factors_td(state: AugmentedState, f: TdFactors, h: Hyperparams,
                            rng: np.random.Generator) -> TdFactors:
    """Conjugate gamma updates: Theta, Phi, then Pi(1) and Pi(2)."""
    I, C = f.theta.shape
    K, J = f.phi.shape
    s_theta, s_phi, s_pi1, s_pi2 = subcount_sums_td(state.subcounts, I, C, K, J)
    pi_sum = f.pi1 + f.pi2
    rate_theta = h.eta2 + pi_sum @ f.phi.sum(axis=1)
    f.theta = positive_gamma(rng, h.eta1 + s_theta, rate_theta)
    rate_phi = h.nu2 + f.theta.sum(axis=0) @ pi_sum
    f.phi = positive_gamma(rng, h.nu1 + s_phi, rate_phi[:, None])
    rate_pi = h.zeta2 + np.outer(f.theta.sum(axis=0), f.phi.sum(axis=1))
    f.pi1 = positive_gamma(rng, h.zeta1 + s_pi1, rate_pi)
    f.pi2 = positive_gamma(rng, h.zeta1 + s_pi2, rate_pi)
    return f


def gibbs_update_factors(state: AugmentedState, f: Factors, h: Hyperparams, rng) -> Factors:
    if isinstance(f, TdFactors):
        return gibbs_update_factors_td(state, f, h, rng)
    return gibbs_update_factors_mf(state, f, h, rng)


# ---------------------------------------------------------------------------
# sweeps, initialisation, chains
# ---------------------------------------------------------------------------


def gibbs_iteration(state: AugmentedState, factors: Factors, data: BoundedMatrix, d: DncbParams,
                    h: Hyperparams, rng: np.random.Generator,
                    allow_approx: bool = False) -> tuple[AugmentedState, Factors]:
    """One full sweep: gammas, counts, subcounts, factors."""
    gibbs_sample_gammas(state, data, d, rng)
    gibbs_sample_counts(state, compose_rates(factors), d, rng, data.mask, allow_approx)
    gibbs_allocate_subcounts(state, factors, rng)
    gibbs_update_factors(state, factors, h, rng)
    return state, factors


def _nmf_moment(data: BoundedMatrix, kind: str, C: int, K: int, init: Factors, scale: float,
                n_iter: int = 200) -> Factors:
    # Multiplicative least-squares updates fitting lambda(1) ~ scale*beta and
    # lambda(2) ~ scale*(1-beta) on observed entries.
    W = data.mask.astype(float)
    L1 = W * scale * data.values
    L2 = W * scale * (1.0 - data.values)
    f = init.copy()
    eps = 1e-12
    for _ in range(n_iter):
        if kind == "mf":
            for t in (1, 2):
                th = f.theta1 if t == 1 else f.theta2
                L = L1 if t == 1 else L2
                th *= (L @ f.phi.T) / ((W * (th @ f.phi)) @ f.phi.T + eps)
            f.phi *= (f.theta1.T @ L1 + f.theta2.T @ L2) / (
                f.theta1.T @ (W * (f.theta1 @ f.phi)) + f.theta2.T @ (W * (f.theta2 @ f.phi)) + eps)
        else:
            A1 = f.pi1 @ f.phi
            A2 = f.pi2 @ f.phi
            f.theta *= (L1 @ A1.T + L2 @ A2.T) / (
                (W * (f.theta @ A1)) @ A1.T + (W * (f.theta @ A2)) @ A2.T + eps)
            for pi, L in ((f.pi1, L1), (f.pi2, L2)):
                pi *= (f.theta.T @ L @ f.phi.T) / (f.theta.T @ (W * (f.theta @ pi @ f.phi)) @ f.phi.T + eps)
            B1 = f.theta @ f.pi1
            B2 = f.theta @ f.pi2
            f.phi *= (B1.T @ L1 + B2.T @ L2) / (B1.T @ (W * (B1 @ f.phi)) + B2.T @ (W * (B2 @ f.phi)) + eps)
    for name in ("theta1", "theta2", "phi", "theta", "pi1", "pi2"):
        if hasattr(f, name):
            setattr(f, name, np.maximum(getattr(f, name), _TINY))
    return f


def initialize_state(data: BoundedMatrix, kind: str, h: Hyperparams, d: DncbParams, C: int | None, K: int,
                     strategy: str, rng: np.random.Generator,
                     moment_scale: float = 10.0) -> tuple[Factors, AugmentedState]:
    """Initial factors and a consistent augmented state.

    ``prior`` draws the factors from their gamma priors.  ``moment`` starts
    from a prior draw and runs nonnegative least-squares updates so that
    lambda(1) and lambda(2) track ``moment_scale * beta`` and
    ``moment_scale * (1 - beta)``.  Either way the counts start at zero and one
    gamma, count and allocation pass follows.
    """
    I, J = data.shape
    if kind == "td":
        if C is None or C < 1:
            raise DomainError("td model needs C >= 1")
        factors: Factors = sample_prior_td(h, I, C, K, J, rng)
    elif kind == "mf":
        factors = sample_prior_mf(h, I, K, J, rng)
    else:
        raise DomainError(f"unknown model kind {kind!r}")
    if strategy == "moment":
        factors = _nmf_moment(data, kind, C or 1, K, factors, moment_scale)
    elif strategy != "prior":
        raise DomainError(f"unknown initialisation strategy {strategy!r}")
    zeros = np.zeros((I, J), dtype=np.int64)
    state = AugmentedState(zeros, zeros.copy(), np.ones((I, J)), np.ones((I, J)))
    # masked gammas get overwritten by the count step
    gibbs_sample_gammas(state, data, d, rng)
    gibbs_sample_counts(state, compose_rates(factors), d, rng, data.mask)
    gibbs_allocate_subcounts(state, factors, rng)
    return factors, state


@dataclass
class Chain:
    """A running chain: model setup plus current factors, state and iteration."""

    data: BoundedMatrix
    kind: str
    params: DncbParams
    hyper: Hyperparams
    factors: Factors
    state: AugmentedState
    iteration: int = 0
    allow_approx: bool = False

    def step(self, rng: np.random.Generator) -> None:
        gibbs_iteration(self.state, self.factors, self.data, self.params, self.hyper, rng, self.allow_approx)
        self.iteration += 1


@dataclass
class FitResult:
    chain: Chain
    samples: list = field(default_factory=list)
    sample_iterations: list = field(default_factory=list)


def run_chain(chain: Chain, iterations: int, rng: np.random.Generator, burn_in: int = 0, thin: int = 1,
              result: FitResult | None = None,
              callback: Callable[[Chain], None] | None = None) -> FitResult:
    """Advance ``chain`` until it has completed ``iterations`` sweeps in total.

    A factor snapshot is kept after sweep ``it`` when ``it > burn_in`` and
    ``(it - burn_in) % thin == 0``.  Passing a restored chain resumes it.
    """
    if thin < 1 or burn_in < 0 or iterations <= burn_in:
        raise DomainError("need iterations > burn_in >= 0 and thin >= 1")
    if result is None:
        result = FitResult(chain)
    while chain.iteration < iterations:
        chain.step(rng)
        it = chain.iteration
        if it > burn_in and (it - burn_in) % thin == 0:
            result.samples.append(chain.factors.copy())
            result.sample_iterations.append(it)
        if callback is not None:
            callback(chain)
    return result


def fit(data: BoundedMatrix, kind: str, d: DncbParams, h: Hyperparams, K: int, rng: np.random.Generator,
        C: int | None = None, iterations: int = 1000, burn_in: int = 500, thin: int = 5,
        init: str = "prior") -> FitResult:
    """Initialise and run one chain, returning posterior factor snapshots."""
    factors, state = initialize_state(data, kind, h, d, C, K, init, rng)
    chain = Chain(data, kind, d, h, factors, state)
    return run_chain(chain, iterations, rng, burn_in, thin)


# ---------------------------------------------------------------------------
# joint-distribution (Geweke) checks
# ---------------------------------------------------------------------------


def _geweke_stats(f: Factors, state: AugmentedState) -> np.ndarray:
    lam1, _ = compose_rates(f)
    theta = f.theta if isinstance(f, TdFactors) else f.theta1
    return np.array([lam1[0, 0], state.y1[0, 0], theta[0, 0]], dtype=float)


GEWEKE_STATS = ("lambda1[0,0]", "y1[0,0]", "theta[0,0]")


def _draw_joint(kind, dims, h, d, rng):
    from .model import simulate_mf, simulate_td

    if kind == "td":
        return simulate_td(h, d, dims, rng)
    I, C, K, J = dims
    return simulate_mf(h, d, (I, K, J), rng)


def geweke_forward(kind: str, dims: tuple[int, int, int, int], h: Hyperparams, d: DncbParams, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Statistics from ``n`` independent joint draws; ``dims`` is (I, C, K, J)."""
    out = np.empty((n, len(GEWEKE_STATS)))
    for s in range(n):
        f, state, _ = _draw_joint(kind, dims, h, d, rng)
        out[s] = _geweke_stats(f, state)
    return out


def geweke_successive(kind: str, dims: tuple[int, int, int, int], h: Hyperparams, d: DncbParams, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Successive-conditional draws: a Gibbs sweep, then fresh data given the latents."""
    f, state, data = _draw_joint(kind, dims, h, d, rng)
    c = d.rates(data.shape[1])
    eps = np.array([d.eps1, d.eps2])
    out = np.empty((n, len(GEWEKE_STATS)))
    for s in range(n):
        gibbs_iteration(state, f, data, d, h, rng)
        g1 = np.maximum(rng.standard_gamma(eps[0] + state.y1) / c, _TINY)
        g2 = np.maximum(rng.standard_gamma(eps[1] + state.y2) / c, _TINY)
        state.gamma1, state.gamma2 = g1, g2
        # bypass clamping so the data is exactly the generative draw
        data.values = g1 / (g1 + g2)
        out[s] = _geweke_stats(f, state)
    return out


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of column means by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    b = x.shape[0] // n_batches
    if b < 1:
        raise DomainError("not enough draws for batch means")
    means = x[: b * n_batches].reshape(n_batches, b, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def geweke_z(forward: np.ndarray, successive: np.ndarray, n_batches: int = 50) -> np.ndarray:
    """z-scores for equality of means between forward and Gibbs-chain statistics."""
    se_f = forward.std(axis=0, ddof=1) / np.sqrt(forward.shape[0])
    se_s = batch_means_se(successive, n_batches)
    return (forward.mean(axis=0) - successive.mean(axis=0)) / np.sqrt(se_f ** 2 + se_s ** 2)
