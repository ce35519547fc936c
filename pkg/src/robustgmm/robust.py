"""Filter-based robust estimators for means, Hermite tensors and covariances.

All estimators use one family: iterative spectral filtering. While the top
eigenvalue of the centered second moment of the surviving points exceeds
``threshold`` times a median-based variance along the top eigenvector, points
are removed at random with probability proportional to their squared
projection score.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import hermite
from .mixture import GaussianMixture, IsotropizingTransform

MAD_TO_SD = 1.0 / 0.6744897501960817

class FilterFailure(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class FilterReport:
    iterations: int = 0
    removed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    final_spectral: float = 0.0
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "n_removed": int(self.removed.size),
                "final_spectral": self.final_spectral, "history": self.history}


def _top_eig(centered: np.ndarray):
    cov = centered.T @ centered / centered.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    return float(max(vals[-1], 0.0)), vecs[:, -1]


def robust_mean_filter(points, eps: float, rng: np.random.Generator,
                       threshold: float = 10.0, budget_factor: float = 3.0,
                       max_iter: int = 200):
    """Robust mean of an ``eps``-corrupted set by randomized spectral filtering.

    Returns ``(mean, FilterReport)``. At most ``budget_factor * eps * n``
    points are removed; with ``eps == 0`` this is the sample mean.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n == 0:
        raise FilterFailure("no points given")
    if eps < 0 or eps >= 0.5:
        raise ValueError("eps must lie in [0, 1/2)")
    report = FilterReport()
    active = np.ones(n, dtype=bool)
    if eps == 0:
        mu = X.mean(axis=0)
        report.final_spectral = _top_eig(X - mu)[0]
        return mu, report
    budget = int(math.floor(budget_factor * eps * n))
    removed_total = 0
    for it in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            raise FilterFailure("filter removed every point", report)
        Y = X[idx]
        mu = Y.mean(axis=0)
        lam, v = _top_eig(Y - mu)
        proj = (Y - mu) @ v
        med = np.median(proj)
        scale = (MAD_TO_SD * np.median(np.abs(proj - med))) ** 2
        report.history.append({"spectral": lam, "scale": float(scale), "active": int(idx.size)})
        report.final_spectral = lam
        if lam <= threshold * scale or lam == 0.0 or removed_total >= budget:
            break
        scores = (proj - med) ** 2
        smax = scores.max()
        drop = rng.random(idx.size) * smax < scores
        n_drop = int(drop.sum())
        room = budget - removed_total
        if n_drop > room:
            # highest scores first, lower index first on ties
            order = np.lexsort((idx, -scores))
            drop = np.zeros(idx.size, dtype=bool)
            drop[order[:room]] = True
            n_drop = room
        if n_drop == 0:
            drop[np.lexsort((idx, -scores))[0]] = True
            n_drop = 1
        active[idx[drop]] = False
        removed_total += n_drop
        report.iterations = it + 1
    report.removed = np.flatnonzero(~active)
    return X[active].mean(axis=0), report


def robust_tensor_mean(points, m: int, eps: float, rng: np.random.Generator,
                       threshold: float = 10.0):
    """Robust estimate of ``E h_m(x)`` as a :class:`~robustgmm.hermite.DenseTensor`.

    The filter runs on isometric symmetric coordinates of ``h_m(x_i)``, so
    Frobenius errors are preserved. Returns ``(tensor, FilterReport)``.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    d = X.shape[1]
    hermite._guard(d, m)
    feats = hermite.hermite_features(X, m)
    if eps == 0:
        vec, report = feats.mean(axis=0), FilterReport()
    else:
        vec, report = robust_mean_filter(feats, eps, rng, threshold=threshold)
    return hermite.sym_to_dense(vec, d, m), report


def _sym2_features(centered: np.ndarray) -> np.ndarray:
    d = centered.shape[1]
    iu = np.triu_indices(d)
    w = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    return centered[:, iu[0]] * centered[:, iu[1]] * w


def _sym2_matrix(vec: np.ndarray, d: int) -> np.ndarray:
    iu = np.triu_indices(d)
    w = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    out = np.zeros((d, d))
    out[iu] = vec / w
    return out + np.triu(out, 1).T


def robust_cov_estimate(points, eps: float, rng: np.random.Generator,
                        threshold: float = 10.0):
    """Robust ``(cov, mean, report)``: a mean filter, then a filter on outer products.

    The returned mean is recomputed on the points that survive both filters.
    """
    X = np.asarray(points, dtype=float)
    n, d = X.shape
    mu0, rep_mean = robust_mean_filter(X, eps, rng, threshold=threshold)
    centered = X - mu0
    feats = _sym2_features(centered)
    if eps == 0:
        m2, rep_cov = feats.mean(axis=0), FilterReport()
    else:
        m2, rep_cov = robust_mean_filter(feats, eps, rng, threshold=threshold)
    keep = np.ones(n, dtype=bool)
    keep[rep_mean.removed] = False
    keep[rep_cov.removed] = False
    mu = X[keep].mean(axis=0)
    delta = mu - mu0
    cov = _sym2_matrix(m2, d) - np.outer(delta, delta)
    cov = 0.5 * (cov + cov.T)
    report = {"mean_filter": rep_mean.to_dict(), "cov_filter": rep_cov.to_dict(),
              "removed": np.flatnonzero(~keep)}
    return cov, mu, report


def robust_second_moment(points, eta: float, max_iter: int = 100) -> np.ndarray:
    """Trimmed second moment ``E[x x^T]``.

    Repeatedly drops the ``eta`` fraction of points with the largest leverage
    ``x^T M^+ x`` against the current estimate until the kept set is stable.
    """
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if eta > 0.01:
        warnings.warn("robust_second_moment is analysed for eta <= 1/100", stacklevel=2)
    n_drop = int(math.floor(eta * n))
    if n_drop == 0:
        return X.T @ X / n
    kept = np.arange(n)
    for _ in range(max_iter):
        Xk = X[kept]
        M = Xk.T @ Xk / kept.size
        lev = np.einsum("ij,jk,ik->i", X, np.linalg.pinv(M, hermitian=True), X)
        new_kept = np.sort(np.argsort(lev, kind="stable")[: n - n_drop])
        if np.array_equal(new_kept, kept):
            break
        kept = new_kept
    Xk = X[kept]
    return Xk.T @ Xk / kept.size


def isotropize(points, eps: float, rng: np.random.Generator, rank_rtol: float = 1e-8,
               threshold: float = 10.0):
    """Robustly whiten ``points``; returns ``(IsotropizingTransform, transformed)``."""
    X = np.asarray(points, dtype=float)
    cov, mu, _ = robust_cov_estimate(X, eps, rng, threshold=threshold)
    vals, vecs = np.linalg.eigh(cov)
    top = vals.max(initial=0.0)
    if top <= 0:
        raise ValueError("robust covariance estimate has rank zero")
    keep = vals > rank_rtol * top
    basis = vecs[:, keep][:, ::-1]
    scale = 1.0 / np.sqrt(vals[keep][::-1])
    transform = IsotropizingTransform(shift=mu, basis=basis, scale=scale)
    return transform, transform.apply(X)


def _centered_gaussian_moment(var: float, m: int) -> float:
    if m % 2:
        return 0.0
    return float(np.prod(np.arange(m - 1, 0, -2))) * var ** (m // 2)


def good_sample_diagnostic(points, labels, mixture: GaussianMixture, gamma: float, t: int,
                           rng: np.random.Generator, n_directions: int = 20,
                           C: float = 1.0) -> dict:
    """Check the good-sample conditions on a labelled synthetic sample.

    Reports the worst ratio (observed deviation / allowed deviation) for
    directional moments, halfspace masses and mixture moment tensors. A
    ratio at most 1 passes.
    """
    from scipy.stats import norm

    X = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    n, d = X.shape
    dirs = rng.standard_normal((n_directions, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    worst_dir = worst_half = 0.0
    for i, (w, comp) in enumerate(zip(mixture.weights, mixture.components)):
        Xi = X[labels == i]
        for v in dirs:
            var = float(v @ comp.cov @ v)
            proj = (Xi - comp.mean) @ v
            if w >= gamma:
                for m in range(1, t + 1):
                    emp = np.sum(proj ** m) / n
                    dev = abs(emp - w * _centered_gaussian_moment(var, m))
                    allowed = w * gamma * math.factorial(m) * var ** (m / 2)
                    if allowed > 0:
                        worst_dir = max(worst_dir, dev / allowed)
                    elif dev > 0:
                        worst_dir = math.inf
            offsets = np.quantile(X @ v, [0.1, 0.3, 0.5, 0.7, 0.9])
            for b in offsets:
                emp = np.sum(Xi @ v >= b) / n
                mean_v = float(comp.mean @ v)
                sd = math.sqrt(var)
                if sd > 0:
                    prob = float(norm.sf((b - mean_v) / sd))
                else:
                    prob = float(mean_v >= b)
                if gamma > 0:
                    worst_half = max(worst_half, abs(emp - w * prob) / gamma)
    B = max(max(float(c.mean @ c.mean), float(np.linalg.eigvalsh(c.cov)[-1]))
            for c in mixture.components)
    worst_tensor = 0.0
    for m in range(1, min(t, 4) + 1):
        emp = np.zeros((d,) * m)
        for row in X:
            emp += hermite.outer_power(row, m)
        emp /= n
        truth = sum(w * hermite._partition_sum(m, c.cov, c.mean)
                    for w, c in zip(mixture.weights, mixture.components))
        dist2 = float(np.sum((emp - truth) ** 2))
        allowed = gamma ** 2 * m ** (C * m) * B ** m * d ** m
        if allowed > 0:
            worst_tensor = max(worst_tensor, dist2 / allowed)
    if math.isinf(gamma):
        worst_dir = worst_half = worst_tensor = 0.0
    worst = max(worst_dir, worst_half, worst_tensor)
    return {"passed": bool(worst <= 1.0), "directional_ratio": worst_dir,
            "halfspace_ratio": worst_half, "tensor_ratio": worst_tensor,
            "margin": 1.0 - worst, "gamma": gamma, "t": t, "C": C}
