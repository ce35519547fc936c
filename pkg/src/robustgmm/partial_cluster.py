"""Split a corrupted sample into two sub-mixture halves.

A moment matrix ``M`` (an ``n x n`` stand-in for the pseudo-expectation of
cluster indicators) is rounded into candidate clusters by thresholding
random rows; clusters with close robust second moments are merged and a
random non-trivial subset of the merged groups forms one side.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .mixture import GaussianComponent, _psd_pinv_sqrt
from .robust import isotropize, robust_second_moment


class MomentMatrixError(ValueError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class MomentMatrix:
    """Nonnegative similarity matrix, either dense or evaluated row by row.

    Invariants (with ``slack``): ``0 <= M(i,j) <= alpha + slack``,
    ``|M(i,i) - alpha| <= slack`` and row means ``>= alpha^2 - slack``.
    """

    def __init__(self, n: int, alpha: float, row_fn: Callable[[int], np.ndarray] | None = None,
                 entries: np.ndarray | None = None, slack: float | None = None):
        if entries is None and row_fn is None:
            raise ValueError("need entries or a row function")
        self.n = n
        self.alpha = float(alpha)
        self.slack = 0.05 * alpha ** 2 if slack is None else float(slack)
        self._entries = None if entries is None else np.asarray(entries, dtype=float)
        self._row_fn = row_fn
        self._cache: dict[int, np.ndarray] = {}
        self.max_cached_rows = 256

    @property
    def is_dense(self) -> bool:
        return self._entries is not None

    @property
    def entries(self) -> np.ndarray:
        if self._entries is None:
            self._entries = np.stack([self.row(i) for i in range(self.n)])
        return self._entries

    def row(self, i: int) -> np.ndarray:
        if self._entries is not None:
            return self._entries[i]
        if i not in self._cache:
            if len(self._cache) >= self.max_cached_rows:
                self._cache.pop(next(iter(self._cache)))  # oldest first
            self._cache[i] = self._row_fn(i)
        return self._cache[i]

    def check_invariants(self, rows=None) -> dict:
        """Per-invariant violation counts over ``rows`` (default: all rows)."""
        rows = range(self.n) if rows is None else rows
        a, s = self.alpha, self.slack
        bad = {"negative": [], "above_alpha": [], "diagonal": [], "row_mean": []}
        for i in rows:
            r = self.row(i)
            if np.any(r < 0):
                bad["negative"].append(int(i))
            if np.any(r > a + s):
                bad["above_alpha"].append(int(i))
            if abs(r[i] - a) > s:
                bad["diagonal"].append(int(i))
            if r.mean() < a * a - s:
                bad["row_mean"].append(int(i))
        report = {name: len(v) for name, v in bad.items()}
        report["ok"] = not any(bad.values())
        report["examples"] = {name: v[:5] for name, v in bad.items() if v}
        return report


def _top_eigs(A, n_eig: int):
    """Largest ``n_eig`` eigenpairs of a symmetric sparse matrix (fewer if it is tiny)."""
    from scipy.linalg import eigh
    from scipy.sparse.linalg import ArpackNoConvergence, eigsh

    m = A.shape[0]
    if m <= max(200, 3 * n_eig):
        vals, vecs = eigh(A.toarray())
        return vals[::-1][:n_eig], vecs[:, ::-1][:, :n_eig]
    try:
        return eigsh(A, k=n_eig, which="LA", v0=np.ones(m) / math.sqrt(m),
                     ncv=min(m, max(4 * n_eig + 1, 30)), tol=1e-8, maxiter=500)
    except ArpackNoConvergence:
        # clustered top eigenvalues (tight, almost disconnected pieces)
        return eigh(A.toarray(), subset_by_index=[m - n_eig, m - 1])


def spectral_embedding(points, k: int, n_neighbors: int = 10, gap_tol: float = 1e-2,
                       max_points: int | None = 4000, rng: np.random.Generator | None = None):
    """Row-normalized bottom eigenvectors of the normalized Laplacian of a kNN graph.

    Only eigenvalues below ``gap_tol`` (near-disconnected pieces) contribute;
    returns ``(embedding, eigenvalues)``. Above ``max_points`` points the graph
    is built on a random landmark subset and every other point takes the row
    of its nearest landmark.
    """
    from scipy.sparse import coo_matrix, diags
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    Z = np.asarray(points, dtype=float)
    if max_points is not None and Z.shape[0] > max_points:
        rng = np.random.default_rng(0) if rng is None else rng
        marks = np.sort(rng.choice(Z.shape[0], size=max_points, replace=False))
        emb, lap = spectral_embedding(Z[marks], k, n_neighbors, gap_tol, None)
        nearest = cKDTree(Z[marks]).query(Z, k=1)[1]
        return emb[nearest], lap
    n = Z.shape[0]
    nn = min(n_neighbors + 1, n)
    dist, idx = cKDTree(Z).query(Z, k=nn)
    dist, idx = dist[:, 1:], idx[:, 1:]
    sigma2 = max(float(np.median(dist[:, -1] ** 2)), 1e-12)
    rows = np.repeat(np.arange(n), nn - 1)
    W = coo_matrix((np.exp(-dist.ravel() ** 2 / sigma2), (rows, idx.ravel())), shape=(n, n))
    W = W.maximum(W.T).tocsr()
    deg = np.asarray(W.sum(axis=1)).ravel()
    dinv = diags(1.0 / np.sqrt(np.maximum(deg, 1e-300)))
    A = dinv @ W @ dinv
    n_eig = min(k + 1, n - 1)
    if n_eig < 1:
        return np.ones((n, 1)), np.zeros(1)
    # eigenvalue 1 repeats once per connected piece, which a single Krylov
    # start vector cannot resolve: solve each piece separately and merge
    n_cc, cc = connected_components(W, directed=False)
    all_vals, all_vecs = [], []
    for c in range(n_cc):
        members = np.flatnonzero(cc == c)
        vals, vecs = _top_eigs(A[members][:, members], n_eig)
        full = np.zeros((n, vals.size))
        full[members] = vecs
        all_vals.append(vals)
        all_vecs.append(full)
    vals, vecs = np.concatenate(all_vals), np.hstack(all_vecs)
    order = np.argsort(-vals, kind="stable")[:n_eig]
    lap = 1.0 - vals[order]
    vecs = vecs[:, order]
    c = max(1, int(np.sum(lap[:k] < gap_tol)))
    emb = vecs[:, :c]
    emb = emb / np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-300)
    return emb, lap


def moment_matrix_oracle(points, mode: str = "affinity", alpha: float | None = None,
                         labels=None, eps: float = 0.0, rng: np.random.Generator | None = None,
                         slack: float | None = None, whiten: bool = True,
                         check: bool | str = "auto", k: int = 2, sharpness: float = 4.0,
                         bandwidth: float = 0.5, n_neighbors: int = 10) -> MomentMatrix:
    """Build a :class:`MomentMatrix` from ground-truth labels or a kernel.

    ``ground-truth``: ``M(i,j) = alpha * [label_i == label_j]``, with ``alpha``
    defaulting to the smallest label fraction. ``affinity``: ``M = alpha K``
    with ``K(i,j) = exp(-(|e_i - e_j|^2 / h_i^2)^p)`` on a spectral embedding
    ``e`` of robustly whitened points (``p = sharpness``, so rows are nearly
    0/1). ``h_i`` is the larger of ``bandwidth`` and the value making the row
    mean of ``K`` equal ``alpha``, so every row mean is at least ``alpha^2``.
    Invariants are checked on all rows (dense) or on a probe set (large lazy
    matrices); violations raise :class:`MomentMatrixError`.
    """
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if mode == "ground-truth":
        if labels is None:
            raise ValueError("ground-truth mode needs labels")
        labels = np.asarray(labels)
        _, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
        if alpha is None:
            alpha = counts.min() / n
        if n <= 5000:
            M = MomentMatrix(n, alpha, entries=alpha * (inv[:, None] == inv[None, :]), slack=slack)
        else:
            M = MomentMatrix(n, alpha, row_fn=lambda i: alpha * (inv == inv[i]), slack=slack)
    elif mode == "affinity":
        if alpha is None:
            raise ValueError("affinity mode needs alpha")
        rng = np.random.default_rng(0) if rng is None else rng
        Z = isotropize(X, eps, rng)[1] if whiten else X
        E, _ = spectral_embedding(Z, k, n_neighbors=n_neighbors, rng=rng)
        sq = np.sum(E * E, axis=1)

        def row(i):
            d2 = np.maximum(sq + sq[i] - 2 * E @ E[i], 0.0)
            d2[i] = 0.0
            kern = lambda h2: np.exp(-(d2 / h2) ** sharpness)
            h2 = bandwidth ** 2
            if np.mean(kern(h2)) < alpha:
                f = lambda lh: np.mean(kern(math.exp(lh))) - alpha
                hi = math.log(h2)
                while f(hi) < 0 and hi < 50:
                    hi += 2.0
                h2 = math.exp(brentq(f, math.log(bandwidth ** 2), hi, xtol=1e-10))
            return alpha * kern(h2)

        M = MomentMatrix(n, alpha, row_fn=row, slack=slack)
        if n <= 5000:
            M._entries = np.stack([row(i) for i in range(n)])
    else:
        raise ValueError(f"unknown oracle mode {mode!r}")
    if check == "auto":
        check = True
    if check:
        rows = None if M.is_dense else np.random.default_rng(1).choice(n, size=min(n, 50),
                                                                        replace=False)
        report = M.check_invariants(rows)
        if not report["ok"]:
            raise MomentMatrixError(f"moment matrix violates invariants: {report}", report)
    return M


def rounding_rows(alpha: float, k: int, eta: float, C: float = 1.0) -> int:
    return max(1, int(math.ceil(C / alpha * math.log(max(k / eta, math.e)))))


def round_partition(m: MomentMatrix, k: int, eta: float, variant: str = "upgraded",
                    rng: np.random.Generator | None = None, C: float = 1.0,
                    n_rows: int | None = None) -> dict:
    """Threshold randomly chosen rows of ``m`` into candidate clusters.

    Returns ``{"clusters", "rows", "threshold", "uncovered"}``.
    """
    rng = np.random.default_rng() if rng is None else rng
    a = m.alpha
    if variant == "v1":
        thr = eta ** 2 * a ** 5 / k
    elif variant == "upgraded":
        thr = a * a / 2
    else:
        raise ValueError(f"unknown rounding variant {variant!r}")
    ell = rounding_rows(a, k, eta, C) if n_rows is None else n_rows
    rows = rng.choice(m.n, size=ell, replace=True)
    clusters = [np.flatnonzero(m.row(int(i)) >= thr) for i in rows]
    covered = np.zeros(m.n, dtype=bool)
    for c in clusters:
        covered[c] = True
    return {"clusters": clusters, "rows": rows.tolist(), "threshold": thr,
            "uncovered": int((~covered).sum()), "n_rows": ell}


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def merge_clusters(clusters, points, eta_i, tau: float, C: float = 1.0,
                   max_points: int | None = 5000) -> dict:
    """Union-find merge of clusters whose robust second moments are within ``2 C tau``.

    ``eta_i`` is a scalar or per-cluster outlier rate for the trimmed second
    moment. Returns ``{"groups", "moments", "distances"}`` with groups as
    lists of cluster indices ordered by their smallest member. Moments of
    clusters larger than ``max_points`` use an evenly strided subset.
    """
    X = np.asarray(points, dtype=float)
    nc = len(clusters)
    rates = np.broadcast_to(np.asarray(eta_i, dtype=float), (nc,))
    moments = []
    for c, r in zip(clusters, rates):
        if len(c) == 0:
            moments.append(np.full((X.shape[1], X.shape[1]), np.nan))
            continue
        c = np.asarray(c)
        if max_points is not None and len(c) > max_points:
            c = c[np.linspace(0, len(c) - 1, max_points).astype(int)]
        moments.append(robust_second_moment(X[c], min(float(r), 0.01)))
    uf = _UnionFind(nc)
    dist = np.full((nc, nc), np.inf)
    for i, j in itertools.combinations(range(nc), 2):
        dij = float(np.linalg.norm(moments[i] - moments[j]))
        dist[i, j] = dist[j, i] = dij
        if dij <= 2 * C * tau:
            uf.union(i, j)
    np.fill_diagonal(dist, 0.0)
    roots: dict[int, list] = {}
    for i in range(nc):
        roots.setdefault(uf.find(i), []).append(i)
    groups = sorted(roots.values(), key=lambda g: g[0])
    return {"groups": groups, "moments": moments, "distances": dist}


def separation_test(a: GaussianComponent, b: GaussianComponent, Delta: float) -> tuple:
    """First satisfied separation condition (mean, spectral, relative Frobenius) and a witness.

    Returns ``(kind, v)`` with ``kind`` in ``{"mean-sep", "spectral-sep",
    "frobenius-sep", "none"}``; ``v`` is a unit witness direction (``None``
    for the Frobenius and none cases).
    """
    if Delta <= 0:
        raise ValueError("Delta must be positive")
    dm = a.mean - b.mean
    tot = a.cov + b.cov
    inv_sqrt, rng_tot = _psd_pinv_sqrt(tot)
    outside = dm - rng_tot @ (rng_tot.T @ dm)
    if np.linalg.norm(outside) > 1e-9 * max(1.0, np.linalg.norm(dm)):
        return "mean-sep", outside / np.linalg.norm(outside)
    v = inv_sqrt @ inv_sqrt @ dm
    if float(dm @ v) > Delta ** 2 and np.linalg.norm(v) > 0:
        return "mean-sep", v / np.linalg.norm(v)
    for s1, s2 in ((a.cov, b.cov), (b.cov, a.cov)):
        w_sqrt, rng2 = _psd_pinv_sqrt(s2)
        null = np.eye(s2.shape[0]) - rng2 @ rng2.T
        vals, vecs = np.linalg.eigh(null @ s1 @ null)
        if vals[-1] > 1e-10 * max(np.trace(s1), 1e-300):
            return "spectral-sep", vecs[:, -1]
        vals, vecs = np.linalg.eigh(w_sqrt @ s1 @ w_sqrt)
        if vals[-1] > Delta:
            v = w_sqrt @ vecs[:, -1]
            return "spectral-sep", v / np.linalg.norm(v)
    inv1, rng1 = _psd_pinv_sqrt(a.cov)
    _, rng2 = _psd_pinv_sqrt(b.cov)
    if rng1.shape[1] == rng2.shape[1] and np.allclose(rng1 @ rng1.T, rng2 @ rng2.T, atol=1e-8):
        rel = float(np.linalg.norm(inv1 @ (b.cov - a.cov) @ inv1) ** 2)
        ratio = float(np.linalg.norm(inv1 @ inv1 @ b.cov, 2) ** 2)
        if rel > Delta ** 2 * ratio:
            return "frobenius-sep", None
    return "none", None


def default_tau(alpha: float, beta: float, t: int = 4, C: float = 1.0,
                prefactor: float = 1e8) -> float:
    return prefactor * C ** 6 * t ** 4 / (beta ** (2.0 / t) * alpha ** 2)


@dataclass
class PartitionResult:
    side1: np.ndarray
    side2: np.ndarray
    clusters: list
    groups: list
    group_members: list
    chosen: list
    trivial: bool
    diagnostics: dict = field(default_factory=dict)


def _nontrivial_subset(n_groups: int, rng: np.random.Generator) -> list[int]:
    # uniform over subsets other than the empty set and the full set
    while True:
        mask = rng.random(n_groups) < 0.5
        if 0 < mask.sum() < n_groups:
            return np.flatnonzero(mask).tolist()


def cluster_purity(side1, side2, labels) -> dict:
    """Per-label fraction of points on the label's majority side."""
    labels = np.asarray(labels)
    s1 = np.zeros(labels.size, dtype=bool)
    s1[np.asarray(side1, dtype=np.intp)] = True
    out = {}
    for c in np.unique(labels):
        on1 = s1[labels == c].mean()
        out[int(c)] = float(max(on1, 1 - on1))
    return out


def isolation_purity(side1, side2, labels, target) -> float:
    """How cleanly ``target`` sits alone on one side.

    The minimum of the fraction of target points on the target's majority
    side and the fraction of that side made of target points.
    """
    labels = np.asarray(labels)
    sides = [np.asarray(side1, dtype=np.intp), np.asarray(side2, dtype=np.intp)]
    counts = [int(np.sum(labels[s] == target)) for s in sides]
    j = int(np.argmax(counts))
    total = max(int(np.sum(labels == target)), 1)
    recall = counts[j] / total
    precision = counts[j] / max(sides[j].size, 1)
    return float(min(recall, precision))


def partial_cluster(points, k: int, alpha: float, eps: float, beta: float,
                    oracle_mode: str = "affinity", rng: np.random.Generator | None = None, *,
                    labels=None, tau: float | None = None, eta: float | None = None,
                    variant: str = "upgraded", C: float = 1.0, t: int = 4,
                    tau_prefactor: float = 1e8, n_rows: int | None = None,
                    slack: float | None = None, moment_matrix: MomentMatrix | None = None
                    ) -> PartitionResult:
    """Oracle, rounding, merging and a random non-trivial subset of merge groups."""
    rng = np.random.default_rng() if rng is None else rng
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if alpha <= 2 * eps:
        raise ValueError("partial clustering needs alpha > 2 eps")
    eta = max(eps, 1e-3) if eta is None else eta
    M = moment_matrix
    if M is None:
        M = moment_matrix_oracle(X, oracle_mode, alpha if oracle_mode == "affinity" else None,
                                 labels=labels, eps=eps, rng=rng, slack=slack, k=k)
    rounding = round_partition(M, k, eta, variant, rng, C=C, n_rows=n_rows)
    clusters = rounding["clusters"]
    if tau is None:
        tau = default_tau(alpha, beta, t, C, tau_prefactor)
    merge = merge_clusters(clusters, X, eta, tau, C)
    groups = merge["groups"]
    members = []
    for g in groups:
        idx = np.unique(np.concatenate([clusters[c] for c in g])) if g else np.zeros(0, np.intp)
        members.append(idx)
    diag = {"n_clusters": len(clusters), "n_groups": len(groups), "tau": tau, "eta": eta,
            "threshold": rounding["threshold"], "uncovered": rounding["uncovered"],
            "n_rows": rounding["n_rows"], "alpha": M.alpha, "variant": variant}
    if len(groups) < 2 or k == 1:
        side1 = np.arange(n)
        result = PartitionResult(side1, np.zeros(0, np.intp), clusters, groups, members, [],
                                 True, diag)
    else:
        chosen = _nontrivial_subset(len(groups), rng)
        in1 = np.zeros(n, dtype=bool)
        for j in chosen:
            in1[members[j]] = True
        result = PartitionResult(np.flatnonzero(in1), np.flatnonzero(~in1), clusters, groups,
                                 members, chosen, False, diag)
    if labels is not None:
        result.diagnostics["purity"] = cluster_purity(result.side1, result.side2, labels)
    return result
