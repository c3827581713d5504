import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from scmc.metrics import accuracy
from scmc.spectral import (ConvergenceError, SpectralError, eig_sym, kmeans,
                           knn_cosine_affinity, spectral_clustering, symmetrize, wcss)


def test_symmetrize_examples(rng):
    S = np.array([[1.0, 2.0], [2.0, 3.0]])
    np.testing.assert_array_equal(symmetrize(S), S)
    np.testing.assert_array_equal(symmetrize(np.array([[0.0, 1.0], [0.0, 0.0]])),
                                  [[0.0, 0.5], [0.5, 0.0]])
    M = symmetrize(rng.normal(size=(7, 7)))
    assert np.array_equal(M, M.T)


def test_eig_diagonal():
    np.testing.assert_allclose(eig_sym(np.diag([3.0, 1.0, 2.0])).values, [1, 2, 3])


def test_eig_two_by_two():
    e = eig_sym(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(e.values, [1.0, 3.0], atol=1e-14)
    s = 1 / np.sqrt(2)
    assert abs(abs(e.vectors[:, 0] @ [s, -s]) - 1) < 1e-12
    assert abs(abs(e.vectors[:, 1] @ [s, s]) - 1) < 1e-12


def test_eig_reconstruction_and_orthogonality(rng):
    S = symmetrize(rng.normal(size=(8, 8)))
    e = eig_sym(S)
    assert np.linalg.norm(e.vectors @ np.diag(e.values) @ e.vectors.T - S) <= 1e-8
    assert np.linalg.norm(e.vectors.T @ e.vectors - np.eye(8)) <= 1e-10
    np.testing.assert_allclose(e.values, np.linalg.eigvalsh(S), atol=1e-10)


def test_eig_rejects_asymmetric_and_reports_nonconvergence(rng):
    with pytest.raises(SpectralError):
        eig_sym(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ConvergenceError):
        eig_sym(symmetrize(rng.normal(size=(10, 10))), max_sweeps=1)


def test_kmeans_separated_groups(rng):
    pts = np.vstack([rng.normal(size=(10, 2)) * 0.1, rng.normal(size=(10, 2)) * 0.1 + 50])
    labels = kmeans(pts, 2, seed=0).labels
    assert len(set(labels[:10])) == 1 and len(set(labels[10:])) == 1 and labels[0] != labels[10]


def test_kmeans_single_cluster(rng):
    pts = rng.normal(size=(9, 3))
    res = kmeans(pts, 1, seed=0)
    assert np.all(res.labels == 0)
    np.testing.assert_allclose(res.centers[0], pts.mean(axis=0), atol=1e-14)


def test_kmeans_rejects_bad_c(rng):
    with pytest.raises(SpectralError):
        kmeans(rng.normal(size=(3, 2)), 4)


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_reaches_exhaustive_optimum(seed):
    pts = np.random.default_rng(seed).normal(size=(6, 2))
    res = kmeans(pts, 2, seed=seed)
    assert wcss(pts, res.labels) == pytest.approx(oracles.min_wcss_2partition(list(pts)), abs=1e-10)


def _blocks(sizes, weak=0.0):
    n = sum(sizes)
    A = np.full((n, n), weak)
    start = 0
    truth = []
    for k, s in enumerate(sizes):
        A[start:start + s, start:start + s] = 1.0
        truth += [k] * s
        start += s
    np.fill_diagonal(A, 0.0)
    return A, np.array(truth)


def test_spectral_two_clean_blocks():
    A, truth = _blocks([4, 5])
    labels = spectral_clustering(A, 2, seed=0).labels
    assert accuracy(labels, truth)[0] == 1.0


def test_spectral_ring_of_cliques():
    A, truth = _blocks([5, 5, 5])
    for a, b in ((4, 5), (9, 10), (14, 0)):
        A[a, b] = A[b, a] = 0.01
    for lap in ("sym", "unnormalized"):
        assert accuracy(spectral_clustering(A, 3, seed=1, laplacian=lap).labels, truth)[0] == 1.0


def test_spectral_permutation_consistency(rng):
    A, truth = _blocks([4, 4, 4], weak=0.05)
    perm = rng.permutation(12)
    base = spectral_clustering(A, 3, seed=0).labels
    moved = spectral_clustering(A[np.ix_(perm, perm)], 3, seed=0).labels
    assert accuracy(moved, base[perm])[0] == 1.0


def test_isolated_vertex_warns():
    A, _ = _blocks([3, 3])
    A = np.pad(A, ((0, 1), (0, 1)))
    with pytest.warns(RuntimeWarning, match="isolated"):
        spectral_clustering(A, 2, seed=0)


def test_knn_affinity_is_symmetric_nonnegative(rng):
    W = knn_cosine_affinity(rng.normal(size=(15, 4)), k=3)
    assert np.array_equal(W, W.T) and W.min() >= 0 and np.all(np.diag(W) == 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_property_eig_reconstructs(n, seed):
    S = symmetrize(np.random.default_rng(seed).normal(size=(n, n)))
    e = eig_sym(S)
    assert np.linalg.norm(e.vectors @ np.diag(e.values) @ e.vectors.T - S) <= 1e-8
    assert np.all(np.diff(e.values) >= 0)
