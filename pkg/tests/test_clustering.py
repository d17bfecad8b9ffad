import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pppd.clustering import (Partition, align_labels, characteristic_vectors, default_min_pts,
                             density_cluster, distortion, effective_dimension, jump_select, kmeans,
                             knee_radius, participation_factors)
from pppd.core import InputError


def planted(n_clusters, dim=2, per=150, sep=12.0, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-sep, sep, (n_clusters, dim))
    while n_clusters > 1 and min(np.linalg.norm(a - b) for a, b in
                                 itertools.combinations(centers, 2)) < sep / 2:
        centers = rng.uniform(-sep, sep, (n_clusters, dim))
    X = np.vstack([c + rng.standard_normal((per, dim)) for c in centers])
    return X, np.repeat(np.arange(n_clusters), per)


# --- k-means ------------------------------------------------------------------------

def test_kmeans_k1_is_mean():
    X = np.random.default_rng(0).standard_normal((50, 3))
    p = kmeans(X, 1)
    np.testing.assert_allclose(p.centers[0], X.mean(axis=0))
    assert p.inertia == pytest.approx(np.sum((X - X.mean(axis=0)) ** 2))


def test_kmeans_k_equals_n():
    X = np.random.default_rng(1).standard_normal((7, 2))
    p = kmeans(X, 7)
    assert p.inertia == pytest.approx(0.0, abs=1e-20)
    assert sorted(p.labels.tolist()) == list(range(7))


def test_kmeans_square_corners_optimal():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    best = np.inf
    # oracle: enumerate the 7 bipartitions of 4 points
    for mask in range(1, 8):
        g = np.array([(mask >> i) & 1 for i in range(4)], bool)
        cost = sum(np.sum((X[s] - X[s].mean(axis=0)) ** 2) for s in (g, ~g))
        best = min(best, cost)
    assert best == pytest.approx(1.0)
    assert kmeans(X, 2, seed=3).inertia == pytest.approx(best)


def test_kmeans_fixed_point():
    X, _ = planted(3, seed=2)
    p = kmeans(X, 3, seed=0)
    d = ((X[:, None, :] - p.centers[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(np.argmin(d, axis=1), p.labels)
    for j in range(3):
        np.testing.assert_allclose(p.centers[j], X[p.labels == j].mean(axis=0))


def test_kmeans_rotation_invariance():
    X, _ = planted(3, seed=4)
    th = 0.7
    Rm = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    a = kmeans(X, 3, seed=1)
    b = kmeans(X @ Rm.T, 3, seed=1)
    np.testing.assert_array_equal(align_labels(a.labels, b.labels), a.labels)
    assert b.inertia == pytest.approx(a.inertia, rel=1e-9)


def test_kmeans_seed_determinism_and_errors():
    X, _ = planted(4, seed=5)
    np.testing.assert_array_equal(kmeans(X, 4, seed=9).labels, kmeans(X, 4, seed=9).labels)
    with pytest.raises(InputError):
        kmeans(X, 0)
    with pytest.raises(InputError):
        kmeans(X[:3], 4)


def test_kmeans_duplicate_points_no_empty_clusters():
    X = np.vstack([np.zeros((10, 2)), np.ones((10, 2))])
    p = kmeans(X, 3, seed=0, restarts=3)
    assert np.all(np.bincount(p.labels, minlength=3) > 0)


# --- distortion and jump method -----------------------------------------------------------

def test_distortion_against_loop():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((40, 3))
    C = rng.standard_normal((4, 3))
    covs = []
    for _ in range(4):
        A = rng.standard_normal((3, 3))
        covs.append(A @ A.T + np.eye(3))
    covs = np.array(covs)
    total = total_id = 0.0
    for x in X:
        j = min(range(4), key=lambda i: float(np.sum((x - C[i]) ** 2)))
        diff = x - C[j]
        total += diff @ np.linalg.inv(covs[j]) @ diff
        total_id += diff @ diff
    assert distortion(X, C, covs) == pytest.approx(total / (3 * 40), rel=1e-12)
    assert distortion(X, C) == pytest.approx(total_id / (3 * 40), rel=1e-12)


def test_effective_dimension():
    rng = np.random.default_rng(0)
    assert effective_dimension(rng.standard_normal((5000, 3))) == pytest.approx(3, rel=0.05)
    X = rng.standard_normal((5000, 3)) * [1.0, 1e-3, 1e-3]
    assert effective_dimension(X) == pytest.approx(1, rel=0.01)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_jump_recovers_planted(n):
    X, truth = planted(n, seed=n)
    jc = jump_select(X, k_max=8, seed=0, restarts=5)
    assert jc.k_star == n
    assert len(jc.k_values) == 8 and len(jc.ell) == 8
    assert np.all(np.diff(jc.distortions) <= 1e-9 * jc.distortions[0])
    labels = jc.partitions[n - 1].labels
    assert np.mean(align_labels(truth, labels) == truth) > 0.99


def test_jump_single_blob_flat_or_ambiguous():
    X = np.random.default_rng(11).standard_normal((600, 2))
    jc = jump_select(X, k_max=8, seed=0, restarts=5)
    assert jc.flat or jc.ambiguous


def test_jump_scale_invariance():
    X, _ = planted(3, seed=7)
    a = jump_select(X, k_max=6, restarts=4)
    b = jump_select(X * 1e-30, k_max=6, restarts=4)
    assert a.k_star == b.k_star
    np.testing.assert_allclose(a.ell, b.ell, rtol=1e-9)


def test_jump_errors():
    with pytest.raises(InputError):
        jump_select(np.zeros((10, 2)), k_max=1)


# --- density clustering -----------------------------------------------------------

def test_density_two_blobs_and_noise():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 0.2, (200, 2)), rng.normal(5, 0.2, (200, 2)), [[20.0, 20.0]]])
    p = density_cluster(X)
    assert p.k == 2
    assert p.labels[-1] == -1
    assert p.noise_fraction < 0.05
    q = density_cluster(X, attach_noise=True)
    assert np.all(q.labels >= 0)
    assert participation_factors(q).sum() == pytest.approx(1.0)


def test_density_explicit_radius():
    X = np.array([[0.0], [0.1], [0.2], [5.0], [5.1], [5.2], [10.0]])
    p = density_cluster(X, eps_radius=0.15, min_pts=2)
    assert p.k == 2
    assert p.labels.tolist()[:6] == [0, 0, 0, 1, 1, 1] and p.labels[6] == -1
    with pytest.raises(InputError):
        density_cluster(X, eps_radius=-1.0)


def test_density_all_noise_warns():
    X = np.arange(10.0)[:, None]
    with pytest.warns(UserWarning, match="noise"):
        p = density_cluster(X, eps_radius=0.1, min_pts=3)
    assert p.k == 0 and len(participation_factors(p)) == 0


def test_default_min_pts_and_knee():
    assert default_min_pts(np.zeros((2000, 3))) == 20
    assert default_min_pts(np.zeros((100, 4))) == 8
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 0.1, (300, 2)), rng.uniform(-20, 20, (30, 2))])
    r = knee_radius(X, 4)
    assert 0 < r < 5


# --- factors and representatives -----------------------------------------------------

@given(st.lists(st.integers(-1, 4), min_size=1, max_size=60))
def test_participation_factors_sum(labels):
    labels = np.array(labels)
    k = max(int(labels.max()) + 1, 1)
    g = participation_factors(Partition(labels, k, np.zeros((k, 1)), 0.0))
    assert g.sum() == pytest.approx(np.mean(labels >= 0))
    assert np.all(g >= 0)


def test_characteristic_vector_tie_rule():
    psi = np.array([[-1.0], [1.0], [5.0]])
    part = Partition(np.array([0, 0, 1]), 2, np.zeros((2, 1)), 0.0)
    chars = characteristic_vectors(part, psi, np.array([[10.0], [20.0], [30.0]]))
    # both members are equidistant from the mean 0; the lower index wins
    assert chars[0]["index"] == 0 and chars[0]["y"][0] == 10.0
    assert chars[1]["index"] == 2
    np.testing.assert_allclose(chars[0]["mean_psi"], [0.0])


def test_characteristic_empty_cluster_skipped():
    part = Partition(np.array([0, 0, 2]), 3, np.zeros((3, 1)), 0.0)
    with pytest.warns(UserWarning, match="empty"):
        chars = characteristic_vectors(part, np.arange(3.0), np.zeros((3, 2)))
    assert [c["cluster"] for c in chars] == [0, 2]


def test_align_labels_permutation():
    ref = np.array([0, 0, 1, 1, 2, 2])
    assert align_labels(ref, np.array([2, 2, 0, 0, 1, 1])).tolist() == ref.tolist()
