import numpy as np
import pytest
from scipy import stats

from pppd.clustering import Partition, kmeans
from pppd.core import InputError, Marginal, PairedDataset, RandomInputSpec
from pppd.decomposition import (GaussianMixture, assemble_report, fit_gmm_em, generating_sets,
                                pattern_likelihood, separation_check)


def two_gaussians_1d(n=4000, seed=0):
    rng = np.random.default_rng(seed)
    n1 = int(0.3 * n)
    X = np.r_[rng.normal(-3, 1.0, n1), rng.normal(4, 0.5, n - n1)][:, None]
    return X, np.r_[np.zeros(n1, int), np.ones(n - n1, int)]


def test_single_component_is_mle():
    rng = np.random.default_rng(1)
    X = rng.multivariate_normal([1, -2], [[2, 0.5], [0.5, 1]], 3000)
    g = fit_gmm_em(X, 1, np.zeros(len(X), int))
    np.testing.assert_allclose(g.means[0], X.mean(axis=0), atol=1e-12)
    cov = np.cov(X.T, bias=True)
    np.testing.assert_allclose(g.covariances[0], cov + 1e-6 * np.trace(cov) / 2 * np.eye(2), rtol=1e-10)
    assert g.weights[0] == pytest.approx(1.0)


def test_two_gaussians_recovered():
    X, lab = two_gaussians_1d()
    g = fit_gmm_em(X, 2, lab)
    assert g.converged
    np.testing.assert_allclose(g.weights, [0.3, 0.7], atol=0.02)
    np.testing.assert_allclose(g.means.ravel(), [-3, 4], atol=0.1)
    np.testing.assert_allclose(np.sqrt(g.covariances.ravel()), [1.0, 0.5], atol=0.05)


def test_em_monotone_from_poor_start():
    X, _ = two_gaussians_1d(seed=2)
    init = np.random.default_rng(0).integers(0, 2, len(X))
    g = fit_gmm_em(X, 2, init)
    tr = np.array(g.log_likelihood_trace)
    assert np.all(np.diff(tr) >= -1e-8 * np.abs(tr[:-1]))


def test_component_logpdf_matches_scipy():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3))
    cov = A @ A.T + np.eye(3)
    g = GaussianMixture(np.array([1.0]), np.array([[0.5, -1, 2]]), cov[None])
    X = rng.standard_normal((10, 3))
    np.testing.assert_allclose(g.component_logpdf(X)[:, 0],
                               stats.multivariate_normal([0.5, -1, 2], cov).logpdf(X), rtol=1e-12)
    gd = GaussianMixture(np.array([1.0]), np.zeros((1, 3)), np.array([[1.0, 2.0, 3.0]]), "diag")
    np.testing.assert_allclose(gd.component_logpdf(X)[:, 0],
                               stats.multivariate_normal(np.zeros(3), np.diag([1, 2, 3])).logpdf(X))


def test_responsibilities():
    g = GaussianMixture(np.array([0.5, 0.5]), np.array([[-1.0], [1.0]]), np.ones((2, 1, 1)))
    R = pattern_likelihood(g, np.array([[0.0], [-1.0], [100.0]]))
    np.testing.assert_allclose(R.sum(axis=1), 1.0)
    np.testing.assert_allclose(R[0], [0.5, 0.5])
    assert R[1, 0] == pytest.approx(1 / (1 + np.exp(-2)))
    # far from both components the log-space evaluation still gives a clean answer
    assert R[2, 1] == pytest.approx(1.0) and np.all(np.isfinite(R))


def test_mixture_reconstruction():
    X, lab = two_gaussians_1d(seed=5)
    g = fit_gmm_em(X, 2, lab)
    S, comp = g.sample(20000, seed=1)
    assert np.mean(comp == 0) == pytest.approx(0.3, abs=0.05)
    q = [0.1, 0.5, 0.9]
    np.testing.assert_allclose(np.quantile(S, q), np.quantile(X, q), atol=0.2)


def test_gmm_input_errors():
    X, lab = two_gaussians_1d(n=100)
    with pytest.raises(InputError):
        fit_gmm_em(X, 3, lab)
    with pytest.raises(InputError):
        fit_gmm_em(X, 2, lab[:-1])
    with pytest.raises(InputError):
        fit_gmm_em(X, 2, lab, covariance_type="spherical")


def test_singular_cluster_falls_back_or_regularizes():
    X = np.vstack([np.zeros((20, 2)), np.random.default_rng(0).standard_normal((20, 2)) + 5])
    g = fit_gmm_em(X, 2, np.r_[np.zeros(20, int), np.ones(20, int)])
    assert np.all(np.isfinite(g.log_likelihood_trace))


def test_separation_examples():
    P = np.array([[0.0], [1.0], [10.0], [11.0]])
    M, ok = separation_check(P, Partition(np.array([0, 0, 1, 1]), 2, np.zeros((2, 1)), 0.0))
    np.testing.assert_allclose(M, [[1.0, 10.0], [10.0, 1.0]])
    assert ok
    M, ok = separation_check(P, Partition(np.array([0, 1, 0, 1]), 2, np.zeros((2, 1)), 0.0))
    np.testing.assert_allclose(M, [[10.0, 5.5], [5.5, 10.0]])
    assert not ok


def _toy_dataset(n=300, seed=0):
    rng = np.random.default_rng(seed)
    reg = rng.integers(1, 3, n)
    x = np.c_[rng.standard_normal(n), reg]
    y = np.c_[np.where(reg == 1, -5.0, 5.0) + rng.standard_normal(n), rng.standard_normal(n)]
    return PairedDataset(x, y, -np.ones(n), {"p_estimate": 1.0, "model_id": "toy"}), reg


def test_generating_sets_partition_inputs():
    ds, reg = _toy_dataset()
    part = Partition(reg - 1, 2, np.zeros((2, 1)), 0.0)
    sets = generating_sets(ds, part)
    assert sum(len(s) for s in sets.values()) == len(ds)
    assert np.all(sets[0][:, 1] == 1) and np.all(sets[1][:, 1] == 2)
    with pytest.raises(InputError):
        generating_sets(ds.subset(np.arange(10)), part)


def test_report_assembly():
    ds, reg = _toy_dataset()
    psi = ds.y[:, :1]
    part = kmeans(psi, 2, seed=0)
    spec = RandomInputSpec.from_blocks([(Marginal("standard-normal"), 1),
                                        (Marginal("discrete-uniform", (1, 2)), 1)])
    rep = assemble_report(ds, psi, part, {"input_spec": spec})
    assert rep.k_star == 2
    assert sum(p["weight"] for p in rep.patterns) == pytest.approx(1.0)
    assert rep.separation["passes"]
    for p in rep.patterns:
        hist = p["x_summary"][1]["histogram"]
        assert sorted(hist.values())[0] == 0  # each pattern is generated by one regime
        assert abs(p["mean_responsibility"] - p["weight"]) < 0.01 and not p["weight_divergence"]
        assert part.labels[p["characteristic_index"]] == p["pattern"]
    assert rep.p_estimate == 1.0
    obj = rep.to_json()
    assert {"k_star", "patterns", "separation", "gmm", "noise_fraction"} <= set(obj)


def test_report_count_mismatch():
    ds, reg = _toy_dataset()
    part = Partition(reg - 1, 2, np.zeros((2, 1)), 0.0)
    with pytest.raises(InputError, match="inconsistent"):
        assemble_report(ds, ds.y[:-1], part)


def test_report_response_space_gmm():
    ds, reg = _toy_dataset()
    part = Partition(reg - 1, 2, np.zeros((2, 1)), 0.0)
    rep = assemble_report(ds, ds.y, part, {"gmm": "response-diag"})
    assert rep.gmm["space"] == "response" and rep.gmm["covariance_type"] == "diag"
    rep = assemble_report(ds, ds.y, part, {"gmm": "off"})
    assert rep.gmm is None
