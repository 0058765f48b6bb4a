"""Held-out prediction, prior predictive checks and co-clustering stability."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, UnderflowError
from .gibbs import fit
from .model import BoundedMatrix, DncbParams, Factors, ModelSpec, TdFactors, compose_rates, sample_dncb
from .special import dncb_log_pdf

DEFAULT_PPD_SAMPLES = 100
KL_SMOOTHING = 1e-6


# ---------------------------------------------------------------------------
# held-out prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeldoutMask:
    """``mask`` is True at held-out entries."""

    mask: np.ndarray
    fraction: float
    seed: int | None = None

    @property
    def observed(self) -> np.ndarray:
        return ~self.mask

    @property
    def n_heldout(self) -> int:
        return int(self.mask.sum())


def make_mask(dims: tuple[int, int], fraction: float, seed: int | np.random.Generator) -> HeldoutMask:
    """Hold out ``round(fraction * I * J)`` entries chosen uniformly without replacement."""
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"fraction must lie in (0, 1), got {fraction}")
    I, J = dims
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = int(round(fraction * I * J))
    flat = np.zeros(I * J, dtype=bool)
    flat[rng.choice(I * J, size=n, replace=False)] = True
    return HeldoutMask(flat.reshape(I, J), fraction, seed if isinstance(seed, (int, np.integer)) else None)


def heldout_log_density(values: np.ndarray, heldout: np.ndarray, samples: Sequence[Factors],
                        d: DncbParams) -> np.ndarray:
    """(S, N) array of DNCB log densities at the N held-out entries, one row per sample."""
    if len(samples) < 1:
        raise DomainError("need at least one posterior sample")
    cells = np.nonzero(heldout)
    if cells[0].size == 0:
        raise DomainError("held-out set is empty")
    beta = np.asarray(values, dtype=float)[cells]
    out = np.empty((len(samples), beta.size))
    for s, f in enumerate(samples):
        lam1, lam2 = compose_rates(f)
        out[s] = dncb_log_pdf(beta, d.eps1, d.eps2, lam1[cells], lam2[cells])
    return out


def rescaled_ppd(values: np.ndarray, heldout: np.ndarray | HeldoutMask, samples: Sequence[Factors],
                 d: DncbParams) -> float:
    """Geometric mean over held-out entries of the posterior-averaged DNCB density.

    ``exp(mean_n log((1/S) sum_s p(beta_n | lambda_s)))``, computed in log space.

    Raises
    ------
    UnderflowError
        If some held-out entry has zero averaged density in double precision.
    """
    if isinstance(heldout, HeldoutMask):
        heldout = heldout.mask
    logp = heldout_log_density(values, heldout, samples, d)
    per_cell = logsumexp(logp, axis=0) - math.log(logp.shape[0])
    if not np.all(np.isfinite(per_cell)):
        raise UnderflowError("posterior predictive density underflowed to zero at a held-out entry")
    return float(np.exp(per_cell.mean()))


# ---------------------------------------------------------------------------
# prior predictive check
# ---------------------------------------------------------------------------

Simulator = Callable[[np.random.Generator], np.ndarray]


def prior_simulator(spec: ModelSpec, dims: tuple[int, int]) -> Simulator:
    """Draw factors from the prior, then a DNCB matrix given the implied rates."""
    I, J = dims
    c = spec.params.rates(J)

    def simulate(rng: np.random.Generator) -> np.ndarray:
        lam1, lam2 = compose_rates(spec.sample_prior(I, J, rng))
        return sample_dncb(spec.params.eps1, spec.params.eps2, lam1, lam2, rng, c=c)

    return simulate


def prior_predictive_mse(data: BoundedMatrix, spec: ModelSpec | None, n_reps: int, rng: np.random.Generator,
                         simulator: Simulator | None = None) -> tuple[float, float]:
    """Mean and standard deviation of the entrywise MSE between data and prior draws.

    Each replicate is compared with the data on its observed entries.
    ``simulator`` replaces the prior draw (it receives the rng and returns an
    I x J matrix); otherwise ``spec`` defines the prior.
    """
    if n_reps < 1:
        raise DomainError("n_reps must be at least 1")
    if simulator is None:
        if spec is None:
            raise DomainError("need a model spec or a simulator")
        simulator = prior_simulator(spec, data.shape)
    obs = data.mask
    target = data.values[obs]
    mse = np.empty(n_reps)
    for r in range(n_reps):
        rep = np.asarray(simulator(rng), dtype=float)
        mse[r] = np.mean((rep[obs] - target) ** 2)
    sd = float(mse.std(ddof=1)) if n_reps > 1 else 0.0
    return float(mse.mean()), sd


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------


def assignments(f: Factors, side: str) -> np.ndarray:
    """Hard cluster labels: argmax over sample factors or feature factors."""
    if side == "samples":
        if isinstance(f, TdFactors):
            return np.argmax(f.theta, axis=1)
        return np.argmax(f.theta1 + f.theta2, axis=1)
    if side == "features":
        return np.argmax(f.phi, axis=0)
    raise DomainError(f"side must be 'samples' or 'features', got {side!r}")


def cooccurrence_from_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(float)


def cooccurrence(f: Factors, side: str) -> np.ndarray:
    """Binary same-cluster matrix from hard argmax assignments."""
    return cooccurrence_from_labels(assignments(f, side))


def stability_kl(reference: np.ndarray, induced: np.ndarray, alpha: float = KL_SMOOTHING) -> float:
    """KL(reference || induced) after additive smoothing and normalisation over all entries."""
    P = np.asarray(reference, dtype=float)
    Q = np.asarray(induced, dtype=float)
    if P.shape != Q.shape:
        raise DomainError(f"shape mismatch: {P.shape} vs {Q.shape}")
    P = P + alpha
    Q = Q + alpha
    P = P / P.sum()
    Q = Q / Q.sum()
    return max(float(np.sum(P * np.log(P / Q))), 0.0)


@dataclass
class StabilityCell:
    C: int | None
    K: int
    kl_samples: float = math.nan
    kl_features: float = math.nan
    error: str | None = None


@dataclass
class StabilityReport:
    kind: str
    reference: str
    cells: list[StabilityCell] = field(default_factory=list)

    def curve(self, side: str, axis: str = "C") -> dict:
        """Map cardinality -> KL, averaged over the other grid axis."""
        key = "kl_samples" if side == "samples" else "kl_features"
        acc: dict = {}
        for cell in self.cells:
            val = getattr(cell, key)
            if cell.error is None:
                acc.setdefault(getattr(cell, axis), []).append(val)
        return {k: float(np.mean(v)) for k, v in sorted(acc.items(), key=lambda kv: (kv[0] is None, kv[0]))}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["C", "K", "kl_samples", "kl_features", "error"])
            for c in self.cells:
                w.writerow(["" if c.C is None else c.C, c.K, repr(c.kl_samples), repr(c.kl_features), c.error or ""])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "reference": self.reference,
            "cells": [asdict(c) for c in self.cells],
            "curves": {
                "samples": {str(k): v for k, v in self.curve("samples").items()},
                "features": {str(k): v for k, v in self.curve("features").items()},
            },
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, allow_nan=True)


@dataclass(frozen=True)
class FitBudget:
    iterations: int = 300
    burn_in: int = 200
    init: str = "prior"


def stability_sweep(data: BoundedMatrix, kind: str, C_range: Sequence[int | None], K_range: Sequence[int],
                    params: DncbParams, rng: np.random.Generator, hyper=None, budget: FitBudget = FitBudget(),
                    sample_labels=None, feature_labels=None) -> StabilityReport:
    """Fit one chain per (C, K) and score co-occurrence drift by KL divergence.

    The reference co-occurrence comes from ``sample_labels`` / ``feature_labels``
    when given; otherwise from the fit at the first grid cell, i.e. the smallest
    cardinalities when the ranges are sorted.  The final posterior sample is
    the point summary.  A failing cell is recorded with its error message.
    For ``kind='mf'`` pass ``C_range=[None]``.
    """
    from .model import Hyperparams

    if len(C_range) == 0 or len(K_range) == 0:
        raise DomainError("C_range and K_range must be nonempty")
    hyper = hyper or Hyperparams()
    grid = [(C if kind == "td" else None, K) for C in C_range for K in K_range]
    streams = rng.spawn(len(grid))
    fits: list = []
    for (C, K), stream in zip(grid, streams):
        try:
            res = fit(data, kind, params, hyper, K, stream, C=C, iterations=budget.iterations,
                      burn_in=budget.burn_in, thin=1, init=budget.init)
            fits.append(res.chain.factors)
        except Exception as exc:  # recorded per cell, not fatal
            fits.append(exc)

    ref = {}
    if sample_labels is not None:
        ref["samples"] = cooccurrence_from_labels(sample_labels)
    if feature_labels is not None:
        ref["features"] = cooccurrence_from_labels(feature_labels)
    if len(ref) < 2:
        first = next((f for f in fits if not isinstance(f, Exception)), None)
        for side in ("samples", "features"):
            if side not in ref and first is not None:
                ref[side] = cooccurrence(first, side)
    report = StabilityReport(kind, "labels" if sample_labels is not None else "first_cell")
    for (C, K), f in zip(grid, fits):
        cell = StabilityCell(C, K)
        if isinstance(f, Exception):
            cell.error = f"{type(f).__name__}: {f}"
        else:
            cell.kl_samples = stability_kl(ref["samples"], cooccurrence(f, "samples"))
            cell.kl_features = stability_kl(ref["features"], cooccurrence(f, "features"))
        report.cells.append(cell)
    return report
