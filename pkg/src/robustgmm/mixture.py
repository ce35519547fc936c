"""Gaussian mixture data model, sampling, densities and distance bounds.

Everything here is immutable once built; random operations take an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

SYM_TOL = 1e-12
PSD_TOL = 1e-10
WEIGHT_TOL = 1e-9


class InvalidMixtureError(ValueError):
    """Raised when mixture parameters violate the model invariants."""


def _sym_psd_check(cov: np.ndarray) -> None:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidMixtureError(f"covariance must be square, got shape {cov.shape}")
    scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYM_TOL * scale:
        raise InvalidMixtureError("covariance is not symmetric")
    if cov.size:
        lam_min = float(np.linalg.eigvalsh(cov)[0])
        if lam_min < -PSD_TOL * max(float(np.trace(cov)), 1.0):
            raise InvalidMixtureError(f"covariance is not PSD (min eigenvalue {lam_min:.3e})")


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise InvalidMixtureError(
                f"mean has dimension {mean.size} but covariance has shape {cov.shape}")
        _sym_psd_check(cov)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        comps = tuple(self.components)
        if len(comps) == 0:
            raise InvalidMixtureError("a mixture needs at least one component")
        if w.size != len(comps):
            raise InvalidMixtureError(
                f"{w.size} weights given for {len(comps)} components")
        if np.any(w < 0):
            raise InvalidMixtureError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidMixtureError(f"weights sum to {w.sum():.12f}, not 1")
        comps = tuple(c if isinstance(c, GaussianComponent) else GaussianComponent(*c)
                      for c in comps)
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise InvalidMixtureError(f"components have mixed dimensions {sorted(dims)}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_params(cls, weights, means, covs) -> "GaussianMixture":
        return cls(weights, tuple(GaussianComponent(m, c) for m, c in zip(means, covs)))

    @classmethod
    def single(cls, mean, cov) -> "GaussianMixture":
        return cls([1.0], (GaussianComponent(mean, cov),))

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def covs(self) -> np.ndarray:
        return np.stack([c.cov for c in self.components])

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        out = np.zeros((self.dim, self.dim))
        for w, c in zip(self.weights, self.components):
            dm = c.mean - mu
            out += w * (c.cov + np.outer(dm, dm))
        return out

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(),
                "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, obj: dict) -> "GaussianMixture":
        try:
            weights = obj["weights"]
            comps = [GaussianComponent(c["mean"], c["cov"]) for c in obj["components"]]
        except (KeyError, TypeError) as exc:
            raise InvalidMixtureError(f"malformed mixture document: {exc}") from exc
        return cls(weights, tuple(comps))


@dataclass(frozen=True)
class Hypothesis:
    mixture: GaussianMixture
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class IsotropizingTransform:
    """Affine map ``y -> scale * basis.T @ (y - shift)`` onto the range of a covariance."""

    shift: np.ndarray
    basis: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float)
        if basis.ndim != 2:
            raise ValueError("basis must be a matrix")
        gram = basis.T @ basis
        if basis.shape[1] and np.max(np.abs(gram - np.eye(basis.shape[1]))) > 1e-9:
            raise ValueError("basis columns are not orthonormal")
        if np.any(np.asarray(self.scale) < 0):
            raise ValueError("scale entries must be nonnegative")

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def apply(self, points: np.ndarray) -> np.ndarray:
        return ((np.asarray(points) - self.shift) @ self.basis) * self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z) / self.scale) @ self.basis.T + self.shift

    def lift_params(self, mean, cov) -> tuple[np.ndarray, np.ndarray]:
        """Map a (mean, cov) pair from whitened coordinates back to the input space."""
        a = self.basis / self.scale
        return a @ mean + self.shift, a @ cov @ a.T


def sample_mixture(m: GaussianMixture, n: int, rng: np.random.Generator):
    """Draw ``n`` points; returns ``(points, labels)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    labels = rng.choice(m.k, size=n, p=m.weights)
    points = np.empty((n, m.dim))
    for i, comp in enumerate(m.components):
        idx = np.flatnonzero(labels == i)
        if idx.size == 0:
            continue
        vals, vecs = np.linalg.eigh(comp.cov)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        points[idx] = comp.mean + rng.standard_normal((idx.size, m.dim)) @ root.T
    return points, labels


def default_floor(m: GaussianMixture) -> float:
    return 1e-9 * max(max(float(np.trace(c.cov)) for c in m.components), 1e-300)


def component_logpdf(points: np.ndarray, mean: np.ndarray, cov: np.ndarray,
                     floor: float = 0.0) -> np.ndarray:
    d = mean.size
    c = cov + floor * np.eye(d)
    chol = np.linalg.cholesky(c)
    diff = np.atleast_2d(points) - mean
    sol = solve_triangular(chol, diff.T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", sol, sol)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (maha + logdet + d * math.log(2 * math.pi))


def log_density(m: GaussianMixture, x: np.ndarray, floor: float | None = None):
    """Log of the mixture density with ``floor * I`` added to every covariance.

    Accepts a single point or an ``(n, d)`` array.
    """
    if floor is None:
        floor = default_floor(m)
    if floor <= 0:
        raise ValueError("floor must be positive")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    terms = []
    for w, c in zip(m.weights, m.components):
        if w <= 0:
            continue
        terms.append(math.log(w) + component_logpdf(pts, c.mean, c.cov, floor))
    out = logsumexp(np.stack(terms), axis=0)
    return float(out[0]) if np.ndim(x) == 1 else out


def _psd_pinv_sqrt(cov: np.ndarray, rtol: float = 1e-10):
    vals, vecs = np.linalg.eigh(cov)
    keep = vals > rtol * max(vals.max(initial=0.0), 1e-300)
    inv_sqrt = (vecs[:, keep] / np.sqrt(vals[keep])) @ vecs[:, keep].T
    return inv_sqrt, vecs[:, keep]


def tv_upper_bound(a: GaussianComponent, b: GaussianComponent, C: float = 1.0) -> float:
    """Upper bound on d_TV(a, b) from the Mahalanobis and relative Frobenius terms.

    Returns 1.0 when the covariance range spaces differ.
    """
    inv_sqrt, range_a = _psd_pinv_sqrt(a.cov)
    _, range_b = _psd_pinv_sqrt(b.cov)
    if range_a.shape[1] != range_b.shape[1]:
        return 1.0
    proj_a = range_a @ range_a.T
    if range_b.shape[1] and np.max(np.abs(proj_a @ range_b - range_b)) > 1e-6:
        return 1.0
    dm = a.mean - b.mean
    if np.linalg.norm(dm - proj_a @ dm) > 1e-9 * max(1.0, np.linalg.norm(dm)):
        return 1.0
    z = inv_sqrt @ dm
    rel = inv_sqrt @ (b.cov - a.cov) @ inv_sqrt
    val = C * math.sqrt(max(float(z @ z), 0.0)) + C * float(np.linalg.norm(rel, "fro"))
    return float(min(max(val, 0.0), 1.0))


def tv_frobenius_bound(a: GaussianComponent, b: GaussianComponent, lam: float,
                       C: float = 1.0) -> float:
    if lam <= 0:
        raise ValueError("eigenvalue lower bound must be positive")
    val = C * (np.linalg.norm(a.mean - b.mean) + np.linalg.norm(a.cov - b.cov, "fro")) / lam
    return float(min(val, 1.0))


def tv_monte_carlo(a: GaussianMixture, b: GaussianMixture, n: int,
                   rng: np.random.Generator, floor: float | None = None):
    """Monte Carlo estimate of d_TV(a, b) with its standard error.

    Draws ``n/2`` points from each mixture (stratified sampling of the
    midpoint mixture) and averages ``|p_a - p_b| / (p_a + p_b)``.
    """
    if n < 1000:
        raise ValueError("use at least 1000 Monte Carlo samples")
    if floor is None:
        floor = max(default_floor(a), default_floor(b))
    half = n // 2
    estimates = []
    for src in (a, b):
        x, _ = sample_mixture(src, half, rng)
        la = log_density(a, x, floor)
        lb = log_density(b, x, floor)
        estimates.append(np.abs(np.tanh(0.5 * (la - lb))))
    means = [e.mean() for e in estimates]
    vars_ = [e.var(ddof=1) / e.size for e in estimates]
    tv = 0.5 * (means[0] + means[1])
    stderr = 0.5 * math.sqrt(vars_[0] + vars_[1])
    return float(tv), float(stderr)


def _pairing_counts(j: int) -> list[tuple[int, int]]:
    """(number of pairs p, count of singleton/pair partitions of [j] with p pairs)."""
    return [(p, math.factorial(j) // (math.factorial(p) * 2 ** p * math.factorial(j - 2 * p)))
            for p in range(j // 2 + 1)]


def raw_moments_1d(m: GaussianMixture, j_max: int) -> np.ndarray:
    """Raw moments ``E[X^j]`` for ``j = 1..j_max`` of a univariate mixture.

    Partitions of ``[j]`` into singletons and pairs are grouped by their
    number of pairs, so the sum is exact without enumerating them.
    """
    if m.dim != 1:
        raise ValueError("raw_moments_1d needs a univariate mixture")
    if j_max > 16:
        raise ValueError("j_max above 16 is not supported")
    out = np.zeros(j_max)
    for w, c in zip(m.weights, m.components):
        mu, var = float(c.mean[0]), float(c.cov[0, 0])
        for j in range(1, j_max + 1):
            out[j - 1] += w * sum(cnt * var ** p * mu ** (j - 2 * p)
                                  for p, cnt in _pairing_counts(j))
    return out


def standard_normal_moments(j_max: int) -> np.ndarray:
    return raw_moments_1d(GaussianMixture.single([0.0], [[1.0]]), j_max)


def moment_distance_check(m: GaussianMixture, beta: float, D: float, k: int,
                          C: float = 1.0) -> dict:
    """Whether some of the first ``2k`` moments of ``m`` differ from N(0,1) by the lower bound.

    The bound is ``beta ** (C**(k+1) * (k+1)! - 1)``. Precondition violations
    only warn.
    """
    bound_beta = 1.0 / (2 * math.factorial(2 * k - 1) * D ** (2 * k - 3))
    if np.any(m.weights < beta) or beta > bound_beta:
        warnings.warn("moment_distance_check preconditions do not hold; result is diagnostic",
                      stacklevel=2)
    if any(abs(c.mean[0]) > D or math.sqrt(c.cov[0, 0]) > D for c in m.components):
        warnings.warn("component parameters exceed D", stacklevel=2)
    diffs = np.abs(raw_moments_1d(m, 2 * k) - standard_normal_moments(2 * k))
    j = int(np.argmax(diffs)) + 1
    exponent = C ** (k + 1) * math.factorial(k + 1) - 1
    threshold = beta ** exponent
    return {"separated": bool(diffs[j - 1] >= threshold), "witness": j,
            "difference": float(diffs[j - 1]), "threshold": float(threshold),
            "exponent": float(exponent), "C": C}


def _sym_tv(a: GaussianComponent, b: GaussianComponent, C: float = 1.0) -> float:
    # both directions are valid upper bounds
    return min(tv_upper_bound(a, b, C), tv_upper_bound(b, a, C))


def tv_cost_matrix(truth: GaussianMixture, hyp: GaussianMixture, C: float = 1.0) -> np.ndarray:
    return np.array([[_sym_tv(t, h, C) for h in hyp.components] for t in truth.components])


def match_components(truth: GaussianMixture, hyp: GaussianMixture, tv_tol: float,
                     C: float = 1.0) -> dict:
    """Label-free matching of truth components to hypothesis components.

    Each truth component goes to its cheapest hypothesis component under the
    TV upper bound; the tolerance is applied after matching and failures
    land in the unmatched set ``R_0``. When the number of components agrees
    a one-to-one assignment is tried first and kept if it is within
    tolerance everywhere.
    """
    cost = tv_cost_matrix(truth, hyp, C)
    assign = np.argmin(cost, axis=1)
    if truth.k == hyp.k:
        rows, cols = linear_sum_assignment(cost)
        if np.all(cost[rows, cols] <= tv_tol):
            assign = cols[np.argsort(rows)]
    groups: list[list[int]] = [[] for _ in range(hyp.k)]
    unmatched = []
    for j, i in enumerate(assign):
        if cost[j, i] <= tv_tol:
            groups[i].append(j)
        else:
            unmatched.append(j)
    cluster_weights = np.array([truth.weights[g].sum() if g else 0.0 for g in groups])
    gaps = np.abs(cluster_weights - hyp.weights)
    return {
        "groups": groups,
        "unmatched": unmatched,
        "unmatched_weight": float(truth.weights[unmatched].sum()) if unmatched else 0.0,
        "cluster_weights": cluster_weights.tolist(),
        "weight_gaps": gaps.tolist(),
        "max_weight_gap": float(gaps.max(initial=0.0)),
        "cost": cost.tolist(),
        "tv_tol": tv_tol,
        "C": C,
    }


def brute_force_matching(truth: GaussianMixture, hyp: GaussianMixture, tv_tol: float,
                         C: float = 1.0) -> dict:
    """Exhaustive search over maps truth -> hyp or unmatched (small k only).

    Minimizes unmatched weight, then total weight gap.
    """
    if truth.k > 5:
        raise ValueError("brute force matching is limited to k <= 5")
    cost = tv_cost_matrix(truth, hyp, C)
    best = None
    for assign in itertools.product(range(-1, hyp.k), repeat=truth.k):
        if any(i >= 0 and cost[j, i] > tv_tol for j, i in enumerate(assign)):
            continue
        w0 = sum(truth.weights[j] for j, i in enumerate(assign) if i < 0)
        cw = np.zeros(hyp.k)
        for j, i in enumerate(assign):
            if i >= 0:
                cw[i] += truth.weights[j]
        gap = float(np.abs(cw - hyp.weights).sum())
        key = (round(w0, 12), gap)
        if best is None or key < best[0]:
            best = (key, assign, cw)
    _, assign, cw = best
    return {"assignment": list(assign), "unmatched_weight": best[0][0],
            "weight_gaps": np.abs(cw - hyp.weights).tolist()}


def weight_gap_threshold(weights_a: Sequence[float], weights_b: Sequence[float],
                         eps: float, c1: float) -> int:
    """Smallest ``i`` in ``[k_a + k_b + 1]`` with no weight in ``[eps**(c1**(i-1)), eps**(c1**i))``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not 0 < c1 < 1:
        raise ValueError("c1 must lie in (0, 1)")
    ws = list(weights_a) + list(weights_b)
    if not ws:
        raise ValueError("weight lists must be nonempty")
    for i in range(1, len(ws) + 2):
        lo, hi = eps ** (c1 ** (i - 1)), eps ** (c1 ** i)
        if not any(lo <= w < hi for w in ws):
            return i
    raise AssertionError("pigeonhole violated")  # unreachable


def save_mixture(m: GaussianMixture, path, **meta) -> None:
    doc = m.to_dict()
    doc.update(meta)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def load_mixture(path) -> GaussianMixture:
    with open(path) as fh:
        return GaussianMixture.from_dict(json.load(fh))
