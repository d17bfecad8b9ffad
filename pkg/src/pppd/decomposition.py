"""Mixture decomposition of the conditional response law into patterns."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .clustering import Partition, characteristic_vectors, participation_factors
from .core import InputError, NumericalError, PairedDataset


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance_type: str = "full"
    space: str = "feature"
    log_likelihood_trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def k(self):
        return len(self.weights)

    def component_logpdf(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = X.shape[1]
        out = np.empty((len(X), self.k))
        for j in range(self.k):
            diff = X - self.means[j]
            if self.covariance_type == "diag":
                var = self.covariances[j]
                out[:, j] = -0.5 * (np.sum(diff * diff / var, axis=1) + np.sum(np.log(var))
                                    + d * np.log(2 * np.pi))
            else:
                L = np.linalg.cholesky(self.covariances[j])
                z = np.linalg.solve(L, diff.T)
                out[:, j] = -0.5 * (np.sum(z * z, axis=0) + d * np.log(2 * np.pi)) \
                    - np.sum(np.log(np.diag(L)))
        return out

    def sample(self, n, seed=0):
        rng = np.random.default_rng(seed)
        comp = rng.choice(self.k, size=n, p=self.weights)
        d = self.means.shape[1]
        X = np.empty((n, d))
        for j in range(self.k):
            idx = np.flatnonzero(comp == j)
            cov = np.diag(self.covariances[j]) if self.covariance_type == "diag" else self.covariances[j]
            X[idx] = rng.multivariate_normal(self.means[j], cov, size=len(idx))
        return X, comp

    def to_json(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "covariances": self.covariances.tolist(), "covariance_type": self.covariance_type,
                "space": self.space, "log_likelihood_trace": self.log_likelihood_trace,
                "converged": self.converged}


def _regularize(cov, diag):
    d = cov.shape[-1]
    tr = np.trace(cov) if not diag else np.sum(cov)
    reg = 1e-6 * tr / d if tr > 0 else 1e-12
    if diag:
        return cov + reg
    return cov + reg * np.eye(d)


def _m_step(X, R, diag):
    nk = R.sum(axis=0)
    nk = np.maximum(nk, 1e-300)
    weights = nk / nk.sum()
    means = (R.T @ X) / nk[:, None]
    covs = []
    for j in range(R.shape[1]):
        diff = X - means[j]
        if diag:
            c = (R[:, j] @ (diff * diff)) / nk[j]
        else:
            c = (diff * R[:, j:j + 1]).T @ diff / nk[j]
            c = 0.5 * (c + c.T)
        covs.append(_regularize(c, diag))
    return weights, means, np.array(covs)


def fit_gmm_em(data, k, init_labels, seed=0, covariance_type="full", tol=1e-8, max_iter=500,
               space="feature"):
    """EM for a Gaussian mixture started from a hard partition.

    Rows labelled -1 (noise) take part in EM but not in the initialisation.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(init_labels)
    if len(labels) != len(X):
        raise InputError("init_labels must align with data rows")
    present = np.unique(labels[labels >= 0])
    if len(present) != k:
        raise InputError(f"k={k} but labels contain {len(present)} clusters")
    diag = covariance_type == "diag"
    if covariance_type not in ("full", "diag"):
        raise InputError(f"unknown covariance_type {covariance_type!r}")
    R = np.zeros((len(X), k))
    for j, lab in enumerate(present):
        R[labels == lab, j] = 1.0
    used = labels >= 0
    weights, means, covs = _m_step(X[used], R[used], diag)
    gmm = GaussianMixture(weights, means, covs, covariance_type, space)
    if not diag:
        try:
            for c in covs:
                np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            warnings.warn("singular covariance after regularisation; using diagonal covariances",
                          stacklevel=2)
            return fit_gmm_em(X, k, labels, seed, "diag", tol, max_iter, space)
    prev = -np.inf
    for it in range(max_iter):
        logp = gmm.component_logpdf(X) + np.log(gmm.weights)
        norm = logsumexp(logp, axis=1)
        ll = float(np.sum(norm))
        if not np.isfinite(ll):
            raise NumericalError(f"EM log-likelihood became non-finite at iteration {it}")
        gmm.log_likelihood_trace.append(ll)
        if np.isfinite(prev) and abs(ll - prev) <= tol * abs(prev):
            gmm.converged = True
            break
        prev = ll
        R = np.exp(logp - norm[:, None])
        try:
            gmm.weights, gmm.means, gmm.covariances = _m_step(X, R, diag)
            if not diag:
                for c in gmm.covariances:
                    np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            warnings.warn("singular covariance during EM; using diagonal covariances", stacklevel=2)
            return fit_gmm_em(X, k, labels, seed, "diag", tol, max_iter, space)
    return gmm


def pattern_likelihood(gmm: GaussianMixture, points):
    """Posterior pattern probabilities, evaluated in log space."""
    logp = gmm.component_logpdf(points) + np.log(gmm.weights)
    R = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return R[0] if np.ndim(points) == 1 else R


def generating_sets(dataset: PairedDataset, partition: Partition):
    """Input samples grouped by response pattern."""
    if len(dataset) != len(partition.labels):
        raise InputError("dataset and partition have different sample counts")
    return {j: dataset.x[partition.labels == j] for j in range(partition.k)}


def separation_check(psi, partition: Partition):
    """Mean pairwise feature distance within and between clusters.

    Passes when every diagonal entry is below all off-diagonal entries of its row.
    """
    P = np.asarray(psi, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    groups = [P[partition.labels == j] for j in range(partition.k)]
    K = len(groups)
    M = np.zeros((K, K))
    for i in range(K):
        for j in range(i, K):
            A, B = groups[i], groups[j]
            if len(A) == 0 or len(B) == 0:
                M[i, j] = M[j, i] = np.nan
                continue
            D = np.sqrt(np.maximum(np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :]
                                   - 2 * A @ B.T, 0.0))
            if i == j:
                n = len(A)
                np.fill_diagonal(D, 0.0)
                M[i, i] = D.sum() / (n * (n - 1)) if n > 1 else 0.0
            else:
                M[i, j] = M[j, i] = D.mean()
    passes = all(M[i, i] < np.delete(M[i], i).min() for i in range(K)) if K > 1 else True
    return M, bool(passes)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _x_summary(x, marginals):
    out = []
    for j, m in enumerate(marginals):
        col = x[:, j]
        entry = {"index": j, "kind": m.kind}
        if m.kind == "discrete-uniform":
            vals = np.asarray(m.params, dtype=float)
            entry["histogram"] = {str(v): int(np.sum(np.isclose(col, v))) for v in vals}
        else:
            entry.update(mean=float(col.mean()), std=float(col.std()), min=float(col.min()),
                         max=float(col.max()))
        out.append(entry)
    return out


def _summary_columns(marginals):
    if len(marginals) <= 10:
        return list(range(len(marginals)))
    return [j for j, m in enumerate(marginals) if m.kind != "standard-normal"]


@dataclass
class PatternReport:
    k_star: int
    patterns: list
    noise_fraction: float
    p_estimate: float | None
    embedding: dict
    separation: dict
    jump: dict | None = None
    gmm: dict | None = None
    meta: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict, repr=False)

    def to_json(self):
        return {"k_star": self.k_star, "noise_fraction": self.noise_fraction,
                "p_estimate": self.p_estimate, "patterns": self.patterns,
                "embedding": self.embedding, "separation": self.separation, "jump": self.jump,
                "gmm": self.gmm, "meta": self.meta}


def assemble_report(dataset: PairedDataset, embedding, partition: Partition, options=None):
    """Collect weights, representatives, generating-set summaries and checks.

    ``embedding`` is anything with a ``coords`` attribute or a plain N x n array.
    Options: ``gmm`` in {"off", "feature", "response-diag"}, ``jump`` (a
    JumpCurve), ``seed``, ``input_spec`` (for x summaries), ``embedding_meta``.
    """
    options = dict(options or {})
    psi = np.asarray(getattr(embedding, "coords", embedding), dtype=float)
    if psi.ndim == 1:
        psi = psi[:, None]
    n = len(dataset)
    if len(psi) != n or len(partition.labels) != n:
        raise InputError(f"inconsistent sample counts: dataset {n}, embedding {len(psi)}, "
                         f"partition {len(partition.labels)}")
    gamma = participation_factors(partition)
    chars = {c["cluster"]: c for c in characteristic_vectors(partition, psi, dataset.y)}
    spec = options.get("input_spec")
    marginals = spec.marginals if spec is not None else None
    cols = _summary_columns(marginals) if marginals is not None else []

    gmm_mode = options.get("gmm", "feature")
    gmm = None
    soft = None
    if gmm_mode != "off" and partition.k >= 1:
        data = psi if gmm_mode == "feature" else dataset.y
        ctype = "full" if gmm_mode == "feature" else "diag"
        if gmm_mode not in ("feature", "response-diag"):
            raise InputError(f"unknown gmm mode {gmm_mode!r}")
        gmm = fit_gmm_em(data, partition.k, partition.labels, options.get("seed", 0), ctype,
                         space="feature" if gmm_mode == "feature" else "response")
        soft = pattern_likelihood(gmm, data).mean(axis=0)

    patterns = []
    for j in range(partition.k):
        members = np.flatnonzero(partition.labels == j)
        entry = {"pattern": j, "weight": float(gamma[j]), "size": int(len(members)),
                 "member_indices": members.tolist()}
        if j in chars:
            entry["characteristic_index"] = chars[j]["index"]
            entry["mean_psi"] = chars[j]["mean_psi"].tolist()
        if cols and len(members):
            entry["x_summary"] = _x_summary(dataset.x[members][:, cols], [marginals[c] for c in cols])
            for e, c in zip(entry["x_summary"], cols):
                e["index"] = c
        if gmm is not None:
            entry["gmm_weight"] = float(gmm.weights[j])
            entry["mean_responsibility"] = float(soft[j])
            entry["weight_divergence"] = bool(abs(soft[j] - gamma[j]) > 0.1)
        patterns.append(entry)

    if partition.k >= 2:
        M, ok = separation_check(psi, partition)
        separation = {"matrix": M.tolist(), "passes": ok}
    else:
        separation = {"matrix": [], "passes": None}
    emb_meta = options.get("embedding_meta")
    if emb_meta is None and hasattr(embedding, "spectrum_json"):
        emb_meta = embedding.spectrum_json()
    jump = options.get("jump")
    k_star = partition.k
    if jump is not None and getattr(jump, "flat", False):
        k_star = 1
    report = PatternReport(
        k_star=int(k_star), patterns=patterns, noise_fraction=partition.noise_fraction,
        p_estimate=dataset.meta.get("p_estimate"), embedding=emb_meta or {},
        separation=separation, jump=jump.to_json() if jump is not None else None,
        gmm=gmm.to_json() if gmm is not None else None,
        meta={k: v for k, v in dataset.meta.items() if k in ("model_id", "model_params", "sampler",
                                                            "limit_state", "seed", "levels")})
    report.arrays = {"psi": psi, "labels": partition.labels, "y": dataset.y, "x": dataset.x,
                     "characteristic": {j: c["index"] for j, c in chars.items()}}
    return report
