import json
import math

import numpy as np
import pytest
from scipy import stats

import dncb.evaluation as evaluation
from dncb.errors import DomainError, UnderflowError
from dncb.evaluation import (
    FitBudget,
    HeldoutMask,
    assignments,
    cooccurrence,
    cooccurrence_from_labels,
    make_mask,
    prior_predictive_mse,
    rescaled_ppd,
    stability_kl,
    stability_sweep,
)
from dncb.gibbs import fit
from dncb.model import BoundedMatrix, DncbParams, Hyperparams, MfFactors, ModelSpec, TdFactors, compose_rates


def _dncb_pdf_oracle(beta, e1, e2, l1, l2):
    # plain Poisson x Poisson mixture of beta densities, summed far into the tail
    n = np.arange(int(max(l1, l2) + 30 * math.sqrt(max(l1, l2)) + 60))
    w1 = stats.poisson.pmf(n, l1)
    w2 = stats.poisson.pmf(n, l2)
    dens = stats.beta.pdf(beta, e1 + n[:, None], e2 + n[None, :])
    return float(np.sum(w1[:, None] * w2[None, :] * dens))


# --- masks ------------------------------------------------------------------


def test_make_mask_count_and_seed():
    m = make_mask((10, 10), 0.1, 3)
    assert m.n_heldout == 10
    assert m.seed == 3
    np.testing.assert_array_equal(m.mask, make_mask((10, 10), 0.1, 3).mask)
    np.testing.assert_array_equal(m.observed, ~m.mask)


def test_make_mask_seeds_differ():
    a = make_mask((400, 5000), 0.1, 1)
    b = make_mask((400, 5000), 0.1, 2)
    assert not np.array_equal(a.mask, b.mask)


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
def test_make_mask_fraction_range(fraction):
    with pytest.raises(DomainError):
        make_mask((5, 5), fraction, 0)


def test_make_mask_accepts_generator():
    m = make_mask((6, 7), 0.3, np.random.default_rng(0))
    assert m.n_heldout == round(0.3 * 42)
    assert m.seed is None


# --- PPD --------------------------------------------------------------------


def test_ppd_zero_rate_is_beta_density():
    f = MfFactors(np.ones((1, 1)), np.ones((1, 1)), np.zeros((1, 1)))
    d = DncbParams(2.0, 3.0)
    ppd = rescaled_ppd(np.array([[0.3]]), np.array([[True]]), [f], d)
    assert ppd == pytest.approx(stats.beta.pdf(0.3, 2.0, 3.0), rel=1e-13)


def test_ppd_matches_bruteforce_oracle():
    rng = np.random.default_rng(0)
    data = BoundedMatrix(rng.uniform(0.05, 0.95, (3, 3)))
    d = DncbParams(0.8, 1.2)
    res = fit(data, "mf", d, Hyperparams(), 2, rng, iterations=150, burn_in=50, thin=1)
    samples = res.samples
    assert len(samples) == 100
    held = np.ones((3, 3), dtype=bool)
    got = rescaled_ppd(data.values, held, samples, d)
    logs = []
    for i in range(3):
        for j in range(3):
            dens = [_dncb_pdf_oracle(data.values[i, j], d.eps1, d.eps2, *(lam[i, j] for lam in compose_rates(f)))
                    for f in samples]
            logs.append(math.log(np.mean(dens)))
    assert got == pytest.approx(math.exp(np.mean(logs)), rel=1e-10)


def test_ppd_prefers_concentrated_correct_model():
    beta = np.full((1, 4), 0.9)
    held = np.ones((1, 4), dtype=bool)
    d = DncbParams(1.0, 1.0)
    sharp = MfFactors(np.full((1, 1), 45.0), np.full((1, 1), 5.0), np.ones((1, 4)))
    diffuse = MfFactors(np.full((1, 1), 1e-3), np.full((1, 1), 1e-3), np.ones((1, 4)))
    assert rescaled_ppd(beta, held, [sharp], d) > rescaled_ppd(beta, held, [diffuse], d)


def test_ppd_invariant_to_order():
    rng = np.random.default_rng(1)
    d = DncbParams(1.0, 1.0)
    samples = [MfFactors(rng.gamma(1, 1, (4, 2)), rng.gamma(1, 1, (4, 2)), rng.gamma(1, 1, (2, 5))) for _ in range(6)]
    values = rng.uniform(0.1, 0.9, (4, 5))
    mask = make_mask((4, 5), 0.4, 0)
    base = rescaled_ppd(values, mask, samples, d)
    assert rescaled_ppd(values, mask, samples[::-1], d) == pytest.approx(base, rel=1e-12)
    # permuting rows permutes the held-out cells
    perm = rng.permutation(4)
    shuffled = [MfFactors(f.theta1[perm], f.theta2[perm], f.phi) for f in samples]
    assert rescaled_ppd(values[perm], mask.mask[perm], shuffled, d) == pytest.approx(base, rel=1e-12)


def test_ppd_errors(monkeypatch):
    f = MfFactors(np.ones((2, 1)), np.ones((2, 1)), np.ones((1, 2)))
    d = DncbParams(1, 1)
    values = np.full((2, 2), 0.5)
    with pytest.raises(DomainError):
        rescaled_ppd(values, np.ones((2, 2), dtype=bool), [], d)
    with pytest.raises(DomainError):
        rescaled_ppd(values, np.zeros((2, 2), dtype=bool), [f], d)
    monkeypatch.setattr(evaluation, "dncb_log_pdf", lambda b, *a: np.full(np.shape(b), -np.inf))
    with pytest.raises(UnderflowError):
        rescaled_ppd(values, np.ones((2, 2), dtype=bool), [f], d)


def test_ppd_accepts_heldout_mask_object():
    f = MfFactors(np.ones((2, 1)), np.ones((2, 1)), np.ones((1, 2)))
    m = HeldoutMask(np.array([[True, False], [False, True]]), 0.5)
    values = np.full((2, 2), 0.4)
    assert rescaled_ppd(values, m, [f], DncbParams(1, 1)) == rescaled_ppd(values, m.mask, [f], DncbParams(1, 1))


# --- prior predictive -------------------------------------------------------


def test_ppc_self_comparison_is_zero():
    data = BoundedMatrix(np.random.default_rng(0).uniform(0.1, 0.9, (5, 6)))
    mean, sd = prior_predictive_mse(data, None, 3, np.random.default_rng(1), simulator=lambda rng: data.values)
    assert mean == 0.0 and sd == 0.0


def test_ppc_uniform_vs_uniform():
    rng = np.random.default_rng(2)
    data = BoundedMatrix(rng.uniform(size=(100, 100)))
    mean, sd = prior_predictive_mse(data, None, 200, rng, simulator=lambda r: r.uniform(size=(100, 100)))
    # E(U - V)^2 = 1/6; the per-rep MSE averages 1e4 cells
    assert abs(mean - 1 / 6) < 0.002
    assert sd > 0


def test_ppc_uses_observed_entries_only():
    vals = np.full((2, 2), 0.5)
    mask = np.array([[True, True], [True, False]])
    data = BoundedMatrix(vals, mask)
    rep = np.array([[0.5, 0.5], [0.5, 0.0]])
    mean, _ = prior_predictive_mse(data, None, 1, np.random.default_rng(0), simulator=lambda r: rep)
    assert mean == 0.0


def test_ppc_permutation_invariant():
    rng = np.random.default_rng(3)
    data = BoundedMatrix(rng.uniform(0.1, 0.9, (8, 9)))
    spec = ModelSpec("td", 3, DncbParams(1, 1), C=2)
    a = prior_predictive_mse(data, spec, 20, np.random.default_rng(4))
    # the prior is exchangeable over rows/columns; the same draws permuted give
    # the same MSE when the data are permuted the same way
    perm_r, perm_c = rng.permutation(8), rng.permutation(9)
    sim = evaluation.prior_simulator(spec, (8, 9))
    permuted = BoundedMatrix(data.values[perm_r][:, perm_c])
    b = prior_predictive_mse(permuted, None, 20, np.random.default_rng(4),
                             simulator=lambda r: sim(r)[perm_r][:, perm_c])
    assert b[0] == pytest.approx(a[0], rel=1e-12)


def test_ppc_from_spec_in_range():
    data = BoundedMatrix(np.random.default_rng(5).uniform(0.1, 0.9, (10, 12)))
    mean, sd = prior_predictive_mse(data, ModelSpec("mf", 2, DncbParams(1, 1)), 10, np.random.default_rng(6))
    assert 0 < mean < 1 and sd >= 0


def test_ppc_validation():
    data = BoundedMatrix(np.full((2, 2), 0.5))
    with pytest.raises(DomainError):
        prior_predictive_mse(data, None, 0, np.random.default_rng(0), simulator=lambda r: data.values)
    with pytest.raises(DomainError):
        prior_predictive_mse(data, None, 2, np.random.default_rng(0))


# --- co-occurrence and KL ---------------------------------------------------


def test_cooccurrence_single_cluster_all_ones():
    f = TdFactors(np.ones((5, 1)), np.ones((2, 4)), np.ones((1, 2)), np.ones((1, 2)))
    np.testing.assert_array_equal(cooccurrence(f, "samples"), np.ones((5, 5)))


def test_cooccurrence_block_structure():
    theta = np.kron(np.eye(2), np.ones((3, 1))) + 0.01
    f = TdFactors(theta, np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 2)))
    expected = np.kron(np.eye(2), np.ones((3, 3)))
    np.testing.assert_array_equal(cooccurrence(f, "samples"), expected)


def test_cooccurrence_bruteforce_and_properties():
    rng = np.random.default_rng(7)
    f = TdFactors(rng.gamma(1, 1, (6, 2)), rng.gamma(1, 1, (3, 5)), np.ones((2, 3)), np.ones((2, 3)))
    for side, n in (("samples", 6), ("features", 5)):
        co = cooccurrence(f, side)
        lab = assignments(f, side)
        for a in range(n):
            for b in range(n):
                assert co[a, b] == float(lab[a] == lab[b])
        np.testing.assert_array_equal(co, co.T)
        np.testing.assert_array_equal(np.diag(co), np.ones(n))


def test_mf_assignments_use_summed_theta():
    f = MfFactors(np.array([[3.0, 0.0], [0.0, 1.0]]), np.array([[0.0, 2.0], [0.0, 1.5]]), np.ones((2, 3)))
    np.testing.assert_array_equal(assignments(f, "samples"), [0, 1])
    with pytest.raises(DomainError):
        assignments(f, "rows")


def test_kl_identical_is_zero():
    A = cooccurrence_from_labels([0, 1, 1, 2])
    assert stability_kl(A, A) == 0.0


def test_kl_hand_case():
    P = cooccurrence_from_labels([0, 0, 1, 1])
    Q = cooccurrence_from_labels([0, 1, 1, 1])
    a = 1e-6
    p = (P + a).ravel() / (P + a).sum()
    q = (Q + a).ravel() / (Q + a).sum()
    kl = 0.0
    for pi, qi in zip(p, q):
        kl += pi * math.log(pi / qi)
    assert stability_kl(P, Q) == pytest.approx(kl, rel=1e-12)
    assert kl > 0


def test_kl_nonnegative_random():
    rng = np.random.default_rng(8)
    for _ in range(50):
        P = cooccurrence_from_labels(rng.integers(0, 3, 7))
        Q = cooccurrence_from_labels(rng.integers(0, 3, 7))
        assert stability_kl(P, Q) >= 0


def test_kl_shape_mismatch():
    with pytest.raises(DomainError):
        stability_kl(np.ones((2, 2)), np.ones((3, 3)))


# --- sweep ------------------------------------------------------------------

_SMALL = FitBudget(iterations=20, burn_in=10)


def _toy_data():
    return BoundedMatrix(np.random.default_rng(9).uniform(0.05, 0.95, (8, 10)))


def test_sweep_single_cell():
    rep = stability_sweep(_toy_data(), "td", [2], [3], DncbParams(1, 1), np.random.default_rng(0), budget=_SMALL)
    assert len(rep.cells) == 1
    cell = rep.cells[0]
    # first cell is its own reference
    assert cell.kl_samples == 0.0 and cell.kl_features == 0.0
    assert rep.reference == "first_cell"


def test_sweep_grid_finite_nonnegative_and_reproducible():
    args = (_toy_data(), "td", [2, 3], [2, 3], DncbParams(1, 1))
    a = stability_sweep(*args, np.random.default_rng(1), budget=_SMALL, sample_labels=[0] * 4 + [1] * 4)
    b = stability_sweep(*args, np.random.default_rng(1), budget=_SMALL, sample_labels=[0] * 4 + [1] * 4)
    assert a.reference == "labels"
    assert [(c.C, c.K) for c in a.cells] == [(2, 2), (2, 3), (3, 2), (3, 3)]
    for ca, cb in zip(a.cells, b.cells):
        assert math.isfinite(ca.kl_samples) and ca.kl_samples >= 0
        assert math.isfinite(ca.kl_features) and ca.kl_features >= 0
        assert ca.kl_samples == cb.kl_samples
    curve = a.curve("samples")
    assert set(curve) == {2, 3}
    assert curve[2] == pytest.approx(np.mean([a.cells[0].kl_samples, a.cells[1].kl_samples]))
    assert set(a.curve("features", axis="K")) == {2, 3}


def test_sweep_mf():
    rep = stability_sweep(_toy_data(), "mf", [None], [2, 3], DncbParams(1, 1), np.random.default_rng(2),
                          budget=_SMALL)
    assert [(c.C, c.K) for c in rep.cells] == [(None, 2), (None, 3)]
    assert list(rep.curve("samples", axis="K")) == [2, 3]


def test_sweep_records_cell_errors(monkeypatch):
    real_fit = evaluation.fit

    def flaky(data, kind, d, h, K, rng, **kw):
        if K == 3:
            raise RuntimeError("boom")
        return real_fit(data, kind, d, h, K, rng, **kw)

    monkeypatch.setattr(evaluation, "fit", flaky)
    rep = stability_sweep(_toy_data(), "td", [2], [2, 3], DncbParams(1, 1), np.random.default_rng(3), budget=_SMALL)
    assert rep.cells[0].error is None
    assert rep.cells[1].error == "RuntimeError: boom"
    assert math.isnan(rep.cells[1].kl_samples)
    assert rep.curve("samples", axis="K") == {2: rep.cells[0].kl_samples}


def test_sweep_empty_ranges():
    with pytest.raises(DomainError):
        stability_sweep(_toy_data(), "td", [], [2], DncbParams(1, 1), np.random.default_rng(0))


def test_report_serialisation(tmp_path):
    rep = stability_sweep(_toy_data(), "td", [2, 3], [2], DncbParams(1, 1), np.random.default_rng(4), budget=_SMALL)
    rep.to_csv(tmp_path / "r.csv")
    rep.to_json(tmp_path / "r.json")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "C,K,kl_samples,kl_features,error"
    assert len(rows) == 3
    assert float(rows[2].split(",")[2]) == rep.cells[1].kl_samples
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["kind"] == "td"
    assert doc["curves"]["samples"]["3"] == rep.cells[1].kl_samples
