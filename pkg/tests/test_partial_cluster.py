import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustgmm import GaussianComponent, GaussianMixture, sample_mixture
from robustgmm.partial_cluster import (MomentMatrix, MomentMatrixError, _UnionFind,
                                       cluster_purity, default_tau, isolation_purity,
                                       merge_clusters, moment_matrix_oracle, partial_cluster,
                                       round_partition, rounding_rows, separation_test,
                                       spectral_embedding)


def far_instance(n, seed):
    """Two near-isotropic components plus one small-variance component far away."""
    d = 3
    mix = GaussianMixture.from_params(
        [1 / 3, 1 / 3, 1 / 3], [np.zeros(d), np.zeros(d), 80 * np.eye(d)[0]],
        [np.eye(d), 1.2 * np.eye(d), 0.05 * np.eye(d)])
    return sample_mixture(mix, n, np.random.default_rng(seed))


def test_ground_truth_matrix_invariants_exact():
    labels = np.repeat([0, 1, 2], [30, 50, 20])
    M = moment_matrix_oracle(np.zeros((100, 2)), "ground-truth", labels=labels)
    assert M.alpha == pytest.approx(0.2)
    rep = M.check_invariants()
    assert rep["ok"] and rep["negative"] == rep["above_alpha"] == rep["row_mean"] == 0
    np.testing.assert_array_equal(M.entries, 0.2 * (labels[:, None] == labels[None, :]))


def test_invariant_violations_detected():
    M = MomentMatrix(3, 0.5, entries=np.array([[0.5, -0.1, 0], [0, 0.9, 0], [0, 0, 0.1]]))
    rep = M.check_invariants()
    assert not rep["ok"]
    assert rep["negative"] == 1 and rep["above_alpha"] == 1 and rep["diagonal"] == 2
    with pytest.raises(ValueError):
        MomentMatrix(3, 0.5)


def test_lazy_rows_match_dense():
    labels = np.repeat([0, 1], 3000)
    X = np.zeros((6000, 1))
    M = moment_matrix_oracle(X, "ground-truth", labels=labels)
    assert not M.is_dense
    np.testing.assert_array_equal(M.row(0), 0.5 * (labels == 0))


def test_rounding_threshold_support():
    labels = np.repeat([0, 1], [40, 60])
    M = moment_matrix_oracle(np.zeros((100, 1)), "ground-truth", labels=labels)
    out = round_partition(M, 2, 0.01, "upgraded", np.random.default_rng(0))
    assert out["n_rows"] == rounding_rows(0.4, 2, 0.01)
    for row, c in zip(out["rows"], out["clusters"]):
        np.testing.assert_array_equal(c, np.flatnonzero(M.row(row) >= out["threshold"]))
        assert set(labels[c]) == {labels[row]}
    v1 = round_partition(M, 2, 0.01, "v1", np.random.default_rng(0))
    assert v1["threshold"] == pytest.approx(0.01 ** 2 * 0.4 ** 5 / 2)
    with pytest.raises(ValueError):
        round_partition(M, 2, 0.01, "v2")


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.lists(st.tuples(st.integers(0, 11), st.integers(0, 11)),
                                    max_size=20))
def test_union_find_matches_connected_components(n, edges):
    uf = _UnionFind(n)
    adj = {i: {i} for i in range(n)}
    for a, b in edges:
        if a < n and b < n:
            uf.union(a, b)
            adj[a].add(b)
            adj[b].add(a)
    # brute-force closure
    comp = {}
    for s in range(n):
        seen, stack = {s}, [s]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        comp[s] = min(seen)
    assert all(uf.find(i) == comp[i] for i in range(n))


def test_merge_clusters_by_second_moment(rng):
    X = np.concatenate([rng.standard_normal((500, 2)), 3 * rng.standard_normal((500, 2))])
    clusters = [np.arange(0, 250), np.arange(250, 500), np.arange(500, 1000)]
    out = merge_clusters(clusters, X, 0.0, tau=0.5)
    assert out["groups"] == [[0, 1], [2]]
    assert out["distances"][0, 2] > 1.0


def test_separation_test_kinds():
    a = GaussianComponent([0.0, 0.0], np.eye(2))
    assert separation_test(a, GaussianComponent([10.0, 0.0], np.eye(2)), 2.0)[0] == "mean-sep"
    kind, v = separation_test(a, GaussianComponent([0.0, 0.0], np.diag([20.0, 1.0])), 2.0)
    assert kind == "spectral-sep" and abs(v[0]) > 0.99
    assert separation_test(a, a, 2.0)[0] == "none"
    thin = GaussianComponent([0.0, 0.0], np.diag([1.0, 0.0]))
    assert separation_test(thin, a, 2.0)[0] == "spectral-sep"
    with pytest.raises(ValueError):
        separation_test(a, a, 0.0)


def test_default_tau_monotone():
    assert default_tau(0.2, 0.1) > default_tau(0.2, 0.2)


def test_purity_helpers():
    labels = np.array([0, 0, 1, 1, 2])
    side1, side2 = np.array([0, 1]), np.array([2, 3, 4])
    assert cluster_purity(side1, side2, labels) == {0: 1.0, 1: 1.0, 2: 1.0}
    assert isolation_purity(side1, side2, labels, 0) == 1.0
    assert isolation_purity(side1, side2, labels, 1) == pytest.approx(2 / 3)


def test_ground_truth_isolates_far_component():
    X, labels = far_instance(1500, 0)
    res = partial_cluster(X, 3, 0.3, 0.0, 0.1, "ground-truth", np.random.default_rng(0),
                          labels=labels, tau=1.5)
    assert not res.trivial
    assert isolation_purity(res.side1, res.side2, labels, 2) >= 0.98


def test_affinity_isolates_far_component():
    X, labels = far_instance(1500, 1)
    res = partial_cluster(X, 3, 0.3, 0.0, 0.1, "affinity", np.random.default_rng(1), tau=1.5)
    assert isolation_purity(res.side1, res.side2, labels, 2) >= 0.9


def test_single_group_is_trivial():
    X = np.random.default_rng(0).standard_normal((400, 2))
    res = partial_cluster(X, 2, 0.4, 0.0, 0.1, "ground-truth", np.random.default_rng(0),
                          labels=np.zeros(400, int), tau=1.0)
    assert res.trivial and len(res.side2) == 0


def test_affinity_requires_alpha():
    with pytest.raises(ValueError):
        moment_matrix_oracle(np.zeros((10, 2)), "affinity")
    with pytest.raises(ValueError):
        moment_matrix_oracle(np.zeros((10, 2)), "bogus", alpha=0.5)


def test_embedding_resolves_disconnected_pieces():
    # three far-apart blobs: eigenvalue 0 of the Laplacian has multiplicity three
    r = np.random.default_rng(3)
    centers = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]])
    labels = np.repeat([0, 1, 2], 300)
    X = centers[labels] + r.standard_normal((900, 2))
    E, lap = spectral_embedding(X, 3)
    assert np.all(lap[:3] < 1e-8) and E.shape[1] == 3
    for c in range(3):
        rows = E[labels == c]
        assert np.allclose(rows, rows[0], atol=1e-6)
    assert np.linalg.matrix_rank(np.stack([E[labels == c][0] for c in range(3)]), tol=1e-3) == 3
