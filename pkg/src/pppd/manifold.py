"""Diffusion-map embedding of response samples."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .core import InputError, NumericalError


@dataclass(frozen=True)
class DiffusionConfig:
    """Kernel and spectral settings.

    ``epsilon=None`` means the median of pairwise squared distances.
    ``dt`` is a quadrature weight on squared distances, so ``dt=0.01`` with a
    0.01 s time grid turns the Euclidean norm of a sampled trajectory into its
    L2 norm over time.
    """

    epsilon: float | None = None
    alpha: float = 1.0
    n_t: int = 4
    tau: int = 1
    knn: int | None = None
    distance: str = "l2"
    dt: float = 1.0
    dense_limit: int = 4000

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise InputError("epsilon must be > 0")
        if not 0 <= self.alpha <= 1:
            raise InputError("alpha must lie in [0, 1]")
        if self.n_t < 2:
            raise InputError("n_t must be >= 2")
        if int(self.tau) != self.tau or self.tau < 1:
            raise InputError("tau must be a positive integer")
        if self.knn is not None and self.knn < 1:
            raise InputError("knn must be >= 1")
        if self.distance != "l2":
            raise InputError(f"unsupported distance {self.distance!r}")
        if not self.dt > 0:
            raise InputError("dt must be > 0")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


@dataclass
class DiffusionEmbedding:
    psi: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    config: DiffusionConfig
    epsilon: float
    tau: int

    @property
    def coords(self):
        """Feature coordinates without the constant first column."""
        return self.psi[:, 1:]

    def spectrum_json(self):
        return {"eigenvalues": self.eigenvalues.tolist(), "epsilon": self.epsilon,
                "tau": self.tau, "config": self.config.to_json()}


def squared_distances(Y, dt=1.0):
    """Pairwise squared Euclidean distances (Gram form, clipped at zero)."""
    Y = np.asarray(Y, dtype=float)
    sq = np.einsum("ij,ij->i", Y, Y)
    D2 = sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T)
    np.maximum(D2, 0.0, out=D2)
    np.fill_diagonal(D2, 0.0)
    D2 = 0.5 * (D2 + D2.T)
    return D2 * dt


def _median_offdiag(D2):
    iu = np.triu_indices(D2.shape[0], 1)
    return float(np.median(D2[iu]))


def _knn_mask(D2, k):
    n = D2.shape[0]
    k = min(k, n - 1)
    # nearest neighbours excluding self; stable ordering keeps ties deterministic
    order = np.argsort(D2 + np.diag(np.full(n, np.inf)), axis=1, kind="stable")[:, :k]
    mask = np.zeros((n, n), bool)
    mask[np.repeat(np.arange(n), k), order.ravel()] = True
    mask |= mask.T
    np.fill_diagonal(mask, True)
    return mask


def build_similarity(Y, cfg: DiffusionConfig, return_epsilon=False):
    """Exponential kernel ``exp(-d^2 / eps)``; sparse when ``knn`` applies."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] < 2:
        raise InputError("need at least two samples in a 2-D array")
    if not np.all(np.isfinite(Y)):
        raise InputError("response data contain non-finite values")
    D2 = squared_distances(Y, cfg.dt)
    eps = cfg.epsilon if cfg.epsilon is not None else _median_offdiag(D2)
    if not eps > 0:
        warnings.warn("all samples identical; kernel is degenerate", stacklevel=2)
        eps = 1.0
    knn = cfg.knn
    if knn is None and Y.shape[0] >= cfg.dense_limit:
        knn = int(math.ceil(math.log(Y.shape[0])))
    W = np.exp(-D2 / eps)
    if knn is not None:
        W = sparse.csr_matrix(np.where(_knn_mask(D2, knn), W, 0.0))
        W = W.maximum(W.T)
    return (W, eps) if return_epsilon else W


def _density_normalize(W, alpha):
    d = np.asarray(W.sum(axis=1)).ravel()
    bad = np.flatnonzero(d <= 0)
    if len(bad):
        raise NumericalError(f"sample {bad[0]} has zero kernel row sum (isolated)")
    scale = d ** (-alpha)
    if sparse.issparse(W):
        Wh = sparse.diags(scale) @ W @ sparse.diags(scale)
        Wh = sparse.csr_matrix(Wh)
    else:
        Wh = W * np.outer(scale, scale)
    dh = np.asarray(Wh.sum(axis=1)).ravel()
    bad = np.flatnonzero(dh <= 0)
    if len(bad):
        raise NumericalError(f"sample {bad[0]} has zero normalized row sum")
    return Wh, dh


def markov_normalize(W, alpha=1.0):
    """Row-stochastic ``M = Dh^-1 D^-a W D^-a``."""
    Wh, dh = _density_normalize(W, alpha)
    if sparse.issparse(Wh):
        return sparse.csr_matrix(sparse.diags(1.0 / dh) @ Wh)
    return Wh / dh[:, None]


def _fix_signs(V):
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def spectral_decomposition(W, cfg: DiffusionConfig):
    """Top ``n_t`` eigenpairs of the Markov matrix built from ``W``.

    Returns eigenvalues and right eigenvectors scaled so the first is one.
    """
    n = W.shape[0]
    if n <= cfg.n_t:
        raise InputError(f"need more than n_t={cfg.n_t} samples, got {n}")
    Wh, dh = _density_normalize(W, cfg.alpha)
    r = 1.0 / np.sqrt(dh)
    if sparse.issparse(Wh):
        S = sparse.diags(r) @ Wh @ sparse.diags(r)
        S = 0.5 * (S + S.T)
        v0 = np.sqrt(dh) / np.linalg.norm(np.sqrt(dh))
        try:
            lam, V = eigsh(S, k=cfg.n_t, which="LA", v0=v0, tol=1e-12, maxiter=20 * n)
        except ArpackNoConvergence as exc:
            raise NumericalError(f"eigensolver did not converge: {exc}") from exc
    else:
        S = Wh * np.outer(r, r)
        S = 0.5 * (S + S.T)
        lam, V = eigh(S, subset_by_index=[n - cfg.n_t, n - 1])
    order = np.argsort(-lam, kind="stable")
    lam, V = lam[order], V[:, order]
    res = np.linalg.norm(S @ V - V * lam, axis=0)
    if np.any(res > 1e-6):
        raise NumericalError(f"eigenpair residuals too large: {res}")
    phi = V * r[:, None]
    phi = phi / phi[:, :1]
    phi[:, 0] = 1.0
    phi[:, 1:] = _fix_signs(phi[:, 1:])
    lam = np.clip(lam, -1.0, 1.0)
    if abs(lam[0] - 1.0) > 1e-8:
        raise NumericalError(f"leading eigenvalue {lam[0]!r} differs from 1")
    return lam, phi


def _psi(lam, phi, tau):
    return phi * lam[None, :] ** tau


def diffusion_embed(Y, cfg: DiffusionConfig = DiffusionConfig()):
    W, eps = build_similarity(Y, cfg, return_epsilon=True)
    lam, phi = spectral_decomposition(W, cfg)
    return DiffusionEmbedding(_psi(lam, phi, cfg.tau), lam, phi, cfg, eps, int(cfg.tau))


def multiscale_embed(Y, cfg: DiffusionConfig, taus):
    """One embedding per timescale from a single eigendecomposition."""
    W, eps = build_similarity(Y, cfg, return_epsilon=True)
    lam, phi = spectral_decomposition(W, cfg)
    out = []
    for tau in taus:
        if int(tau) != tau or tau < 1:
            raise InputError("tau must be a positive integer")
        out.append(DiffusionEmbedding(_psi(lam, phi, int(tau)), lam, phi, cfg, eps, int(tau)))
    return out
