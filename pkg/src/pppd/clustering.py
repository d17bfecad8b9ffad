"""Clustering in feature space and selection of the number of patterns."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import DBSCAN
from sklearn.neighbors import NearestNeighbors

from .core import InputError


@dataclass
class Partition:
    labels: np.ndarray
    k: int
    centers: np.ndarray
    inertia: float
    method: str = "kmeans"
    events: list = field(default_factory=list)
    inertia_trace: list = field(default_factory=list)

    @property
    def noise_fraction(self):
        return float(np.mean(self.labels < 0))

    def to_json(self):
        return {"method": self.method, "k": int(self.k), "labels": self.labels.tolist(),
                "centers": self.centers.tolist(), "inertia": float(self.inertia),
                "events": self.events}

    @classmethod
    def from_json(cls, obj):
        centers = np.asarray(obj["centers"], dtype=float)
        return cls(np.asarray(obj["labels"], dtype=int), int(obj["k"]), centers,
                   float(obj["inertia"]), obj.get("method", "kmeans"), obj.get("events", []))


@dataclass
class JumpCurve:
    k_values: np.ndarray
    distortions: np.ndarray
    ell: np.ndarray
    a: float
    k_star: int
    flat: bool = False
    ambiguous: bool = False
    partitions: list = field(default_factory=list, repr=False)

    def to_json(self):
        return {"k_values": self.k_values.tolist(), "distortions": self.distortions.tolist(),
                "ell": self.ell.tolist(), "a": self.a, "k_star": int(self.k_star),
                "flat": self.flat, "ambiguous": self.ambiguous}


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _sqdist(P, C):
    d = np.sum(P * P, axis=1)[:, None] + np.sum(C * C, axis=1)[None, :] - 2.0 * P @ C.T
    return np.maximum(d, 0.0)


def _kmeanspp(P, k, rng):
    n = len(P)
    centers = np.empty((k, P.shape[1]))
    centers[0] = P[rng.integers(n)]
    closest = np.sum((P - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = P[idx]
        closest = np.minimum(closest, np.sum((P - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(P, centers, max_iter):
    k = len(centers)
    labels = None
    events, trace = [], []
    for it in range(max_iter):
        D = _sqdist(P, centers)
        new = np.argmin(D, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # reseed at the point farthest from its own centre
            far = int(np.argmax(D[np.arange(len(P)), labels]))
            events.append({"iteration": it, "cluster": int(j), "reseeded_at": far})
            labels[far] = j
            counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, P)
        centers = sums / counts[:, None]
        trace.append(float(np.sum((P - centers[labels]) ** 2)))
    inertia = float(np.sum((P - centers[labels]) ** 2))
    return labels, centers, inertia, events, trace


def kmeans(psi, k, seed=0, restarts=10, max_iter=300):
    """Best-of-restarts Lloyd iteration with k-means++ seeding."""
    P = np.asarray(psi, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if not 1 <= k <= len(P):
        raise InputError(f"k must lie in [1, {len(P)}], got {k}")
    best = None
    for r, child in enumerate(np.random.SeedSequence(seed).spawn(restarts)):
        rng = np.random.default_rng(child)
        labels, centers, inertia, events, trace = _lloyd(P, _kmeanspp(P, k, rng), max_iter)
        if best is None or inertia < best.inertia:
            best = Partition(labels, k, centers, inertia, "kmeans", events, trace)
    return best


# ---------------------------------------------------------------------------
# density clustering
# ---------------------------------------------------------------------------

def knee_radius(psi, min_pts):
    """Knee of the sorted ``min_pts``-nearest-neighbour distance curve, taken
    as the point farthest from the chord joining its ends."""
    P = np.asarray(psi, dtype=float)
    k = min(min_pts, len(P) - 1)
    nn = NearestNeighbors(n_neighbors=k + 1).fit(P)
    dist = np.sort(nn.kneighbors(P)[0][:, -1])
    n = len(dist)
    x = np.linspace(0.0, 1.0, n)
    span = dist[-1] - dist[0]
    if span <= 0:
        return float(dist[-1]) if dist[-1] > 0 else 1.0
    y = (dist - dist[0]) / span
    gap = x - y  # distance to the chord up to a constant factor
    return float(dist[int(np.argmax(gap))])


def default_min_pts(psi):
    P = np.atleast_2d(psi)
    return max(2 * P.shape[1], int(math.ceil(0.01 * len(P))))


def density_cluster(psi, eps_radius=None, min_pts=None, attach_noise=False):
    """DBSCAN; the radius defaults to the knee of the k-distance curve.

    With ``attach_noise`` every noise sample takes the label of its nearest
    clustered sample, so the participation factors sum to one.
    """
    P = np.asarray(psi, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if min_pts is None:
        min_pts = default_min_pts(P)
    if min_pts < 1:
        raise InputError("min_pts must be >= 1")
    if len(P) < 2:
        eps_radius = eps_radius or 1.0
    elif eps_radius is None:
        eps_radius = knee_radius(P, min_pts)
    if not eps_radius > 0:
        raise InputError("eps_radius must be > 0")
    labels = DBSCAN(eps=eps_radius, min_samples=min_pts).fit_predict(P)
    k = int(labels.max() + 1) if labels.size else 0
    if k == 0:
        warnings.warn("density clustering labelled every sample as noise", stacklevel=2)
        return Partition(labels, 0, np.zeros((0, P.shape[1])), 0.0, "dbscan",
                         [{"eps_radius": eps_radius, "min_pts": min_pts}])
    events = [{"eps_radius": float(eps_radius), "min_pts": int(min_pts)}]
    noise = np.flatnonzero(labels < 0)
    if attach_noise and len(noise):
        core = np.flatnonzero(labels >= 0)
        nn = NearestNeighbors(n_neighbors=1).fit(P[core])
        labels = labels.copy()
        labels[noise] = labels[core[nn.kneighbors(P[noise])[1][:, 0]]]
        events.append({"noise_attached": int(len(noise))})
    centers = np.array([P[labels == j].mean(axis=0) for j in range(k)])
    inside = labels >= 0
    inertia = float(np.sum((P[inside] - centers[labels[inside]]) ** 2))
    return Partition(labels, k, centers, inertia, "dbscan", events)


# ---------------------------------------------------------------------------
# number of clusters
# ---------------------------------------------------------------------------

def distortion(psi, centers, covariances=None):
    """Average per-dimension Mahalanobis distortion to the nearest centre.

    With ``covariances=None`` every cluster covariance is the identity.
    """
    P = np.asarray(psi, dtype=float)
    n = P.shape[1]
    nearest = np.argmin(_sqdist(P, centers), axis=1)
    diff = P - centers[nearest]
    if covariances is None:
        q = np.sum(diff * diff, axis=1)
    else:
        inv = np.linalg.inv(np.asarray(covariances, dtype=float))
        q = np.einsum("ij,ijk,ik->i", diff, inv[nearest], diff)
    return float(np.sum(q) / (n * len(P)))


def effective_dimension(psi):
    """Participation ratio of coordinate variances, ``(sum v)^2 / sum v^2``."""
    v = np.var(np.asarray(psi, dtype=float), axis=0)
    if not np.any(v > 0):
        return 1.0
    return float(v.sum() ** 2 / np.sum(v * v))


def jump_select(psi, k_max=10, seed=0, restarts=10, a=None, dimension="effective"):
    """Jump method: ``ell_K = d_{K-1}^-a - d_K^-a`` with ``d_0^-a = 0``.

    ``a`` defaults to half the dimension, where the dimension is either the
    effective one (``dimension="effective"``) or the coordinate count
    (``"nominal"``). The chosen K minimises ``ell`` over K >= 2; K = 1 is
    returned only when that part of the curve is flat within 10 %.
    """
    P = np.asarray(psi, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if k_max < 2:
        raise InputError("k_max must be >= 2")
    k_max = min(k_max, len(P))
    # a global power-of-two rescale leaves the selection unchanged and keeps
    # tiny large-tau coordinates away from underflow
    rms = math.sqrt(float(np.mean(P * P))) or 1.0
    P = P / 2.0 ** round(math.log2(rms))
    if a is None:
        n = effective_dimension(P) if dimension == "effective" else P.shape[1]
        a = n / 2.0
    parts, d = [], []
    for K in range(1, k_max + 1):
        part = kmeans(P, K, seed=seed + K, restarts=restarts)
        parts.append(part)
        d.append(distortion(P, part.centers))
    d = np.array(d)
    ks = np.arange(1, k_max + 1)
    zero = np.flatnonzero(d <= 0)
    if len(zero):
        K0 = int(ks[zero[0]])
        ell = np.full(k_max, np.nan)
        return JumpCurve(ks, d, ell, float(a), K0, partitions=parts)
    t = (d / d[0]) ** (-a)
    ell = np.concatenate([[0.0], t[:-1]]) - t
    tail = ell[1:]
    k_star = int(np.argmin(tail)) + 2
    spread = tail.max() - tail.min()
    flat = bool(spread <= 0.1 * np.max(np.abs(tail)))
    srt = np.sort(tail)
    ambiguous = bool(len(srt) > 1 and abs(srt[0]) < 1.2 * abs(srt[1]))
    if flat:
        k_star = 1
    return JumpCurve(ks, d, ell, float(a), k_star, flat, ambiguous, parts)


def participation_factors(partition: Partition):
    labels = np.asarray(partition.labels)
    if partition.k < 1:
        return np.zeros(0)
    counts = np.bincount(labels[labels >= 0], minlength=partition.k)
    return counts / len(labels)


def characteristic_vectors(partition: Partition, psi, y_data):
    """Per cluster: mean feature vector, index of the nearest member, its response."""
    P = np.asarray(psi, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    out = []
    for j in range(partition.k):
        members = np.flatnonzero(partition.labels == j)
        if len(members) == 0:
            warnings.warn(f"cluster {j} is empty; skipped", stacklevel=2)
            continue
        mean = P[members].mean(axis=0)
        idx = int(members[np.argmin(np.sum((P[members] - mean) ** 2, axis=1))])
        out.append({"cluster": j, "mean_psi": mean, "index": idx, "y": np.asarray(y_data)[idx]})
    return out


def align_labels(reference, labels):
    """Relabel ``labels`` to best match ``reference`` (Hungarian matching)."""
    from scipy.optimize import linear_sum_assignment

    reference, labels = np.asarray(reference), np.asarray(labels)
    ra = np.unique(reference[reference >= 0])
    la = np.unique(labels[labels >= 0])
    C = np.array([[np.sum((reference == r) & (labels == l)) for l in la] for r in ra])
    rows, cols = linear_sum_assignment(-C)
    mapping = {la[c]: ra[r] for r, c in zip(rows, cols)}
    extra = max(ra.max(initial=-1), 0) + 1
    out = np.full_like(labels, -1)
    for l in la:
        if l in mapping:
            out[labels == l] = mapping[l]
        else:
            out[labels == l] = extra
            extra += 1
    return out
