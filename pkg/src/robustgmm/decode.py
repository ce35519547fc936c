"""List-decodable recovery of candidate component parameters from Hermite tensors.

Works in (approximately) isotropized coordinates. The pieces are:

* ``random_collapse``: contract two modes of the 4th Hermite tensor against
  random Gaussian directions with random coefficients.
* ``build_search_subspace``: span of large singular vectors of the tensor
  flattenings and of the collapsed matrix.
* candidate generation in that subspace, by one of three searches:
  ``cover`` (exhaustive grid enumeration, exponentially large), ``efficient``
  (a low-dimensional learner run on fresh points) or ``moments`` (least-squares
  fit of a k-mixture to the projected tensors).
* ``assemble_candidates``: lift subspace estimates back to full dimension.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import comb, logsumexp

from . import hermite
from .hermite import DenseTensor
from .mixture import GaussianComponent, _sym_tv, component_logpdf
from .robust import robust_cov_estimate, robust_tensor_mean


# --------------------------------------------------------------------------
# parameters


def decode_parameters(k: int, alpha: float, eps: float, Delta: float = 2.0,
                      constants: dict | None = None, eta: float | None = None,
                      eta_cap: float = 0.25) -> dict:
    """Formula parameters with configurable constants and a cap on eta.

    Every value is reported together with the uncapped formula value.
    """
    c = constants or {}
    C_eta = c.get("alg3.2.eta.C", 1.0)
    C_D = c.get("alg3.2.D.C", 1.0)
    C_G = c.get("alg3.2.G.C", 1.0)
    C_ell = c.get("alg3.2.ell.C", 100.0)
    C_phi = c.get("alg3.2.phi.C", 10.0)
    eta_formula = (2 * k) ** (4 * k) * (C_eta * k * (1 / alpha + Delta)) ** (4 * k) * math.sqrt(eps)
    if eta is None:
        eta = min(eta_formula, eta_cap) if eps > 0 else min(eta_cap, 1e-3)
    eta = float(eta)
    G = 1.0 / (C_G ** (k + 1) * math.factorial(k + 1))
    delta = 2.0 * eta ** G
    D = C_D * k ** 4 / (alpha * math.sqrt(eta))
    base = eta / (k ** 5 * (Delta ** 4 + 1 / alpha ** 4))
    ell = C_ell * math.log(max(k, 2)) * base ** (-4 * k)
    return {"eta": eta, "eta_formula": eta_formula, "G": G, "delta": delta, "D": D,
            "ell_formula": ell, "lambda": 4 * eta,
            "phi": C_phi * (1 + Delta ** 2) / (math.sqrt(eta) * alpha ** 5),
            "k_prime": int(max(1, round(c.get("alg3.2.kprime.C", 1.0) * k * k))),
            "constants": {"alg3.2.eta.C": C_eta, "alg3.2.D.C": C_D, "alg3.2.G.C": C_G,
                          "alg3.2.ell.C": C_ell, "alg3.2.phi.C": C_phi}}


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class CollapseDraw:
    xs: np.ndarray
    ys: np.ndarray
    a: np.ndarray
    s_hat: np.ndarray
    D: float


@dataclass(frozen=True)
class SearchSubspace:
    basis: np.ndarray
    sources: tuple = ()

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.shape[1] and np.max(np.abs(b.T @ b - np.eye(b.shape[1]))) > 1e-9:
            raise ValueError("subspace basis is not orthonormal")
        object.__setattr__(self, "basis", b)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient(self) -> int:
        return self.basis.shape[0]


@dataclass
class CandidateList:
    """Candidate ``(mean, cov)`` pairs; ``groups`` index k-tuples that were fitted together."""

    entries: list = field(default_factory=list)
    budget: int | None = None
    groups: list = field(default_factory=list)
    truncated: bool = False

    def __len__(self):
        return len(self.entries)

    def add(self, mean, cov, **tags) -> int | None:
        if self.budget is not None and len(self.entries) >= self.budget:
            self.truncated = True
            return None
        cov = np.asarray(cov, dtype=float)
        self.entries.append({"mean": np.asarray(mean, dtype=float),
                             "cov": 0.5 * (cov + cov.T), "tags": dict(tags)})
        return len(self.entries) - 1

    def add_group(self, comps, **tags) -> list[int]:
        """Add a fitted tuple of ``(weight, mean, cov)`` as a group."""
        ids = []
        for j, (w, mu, cov) in enumerate(comps):
            i = self.add(mu, cov, weight=float(w), **tags)
            if i is None:
                break
            ids.append(i)
        if len(ids) == len(comps) and ids:
            self.groups.append(ids)
        return ids

    def extend(self, other: "CandidateList") -> None:
        offset = len(self.entries)
        for e in other.entries:
            if self.add(e["mean"], e["cov"], **e["tags"]) is None:
                return
        for g in other.groups:
            if all(offset + i < len(self.entries) for i in g):
                self.groups.append([offset + i for i in g])
        self.truncated |= other.truncated

    def dedupe(self, tol: float) -> None:
        """Drop entries within ``tol`` (l2 + Frobenius) of an earlier one; groups are remapped."""
        keep: list[int] = []
        remap = {}
        for i, e in enumerate(self.entries):
            for j in keep:
                f = self.entries[j]
                dist = np.linalg.norm(e["mean"] - f["mean"]) + np.linalg.norm(e["cov"] - f["cov"])
                if dist < tol:
                    remap[i] = remap[j]
                    break
            else:
                remap[i] = len(keep)
                keep.append(i)
        self.entries = [self.entries[i] for i in keep]
        groups = []
        for g in self.groups:
            ng = [remap[i] for i in g]
            if ng not in groups:
                groups.append(ng)
        self.groups = groups

    def components(self) -> list[GaussianComponent]:
        out = []
        for e in self.entries:
            vals, vecs = np.linalg.eigh(e["cov"])
            cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
            out.append(GaussianComponent(e["mean"], 0.5 * (cov + cov.T)))
        return out

    def to_json(self) -> list:
        group_of = {}
        for gi, g in enumerate(self.groups):
            for i in g:
                group_of.setdefault(i, []).append(gi)
        return [{"mean": e["mean"].tolist(), "cov": e["cov"].tolist(),
                 "tags": {**_jsonable(e["tags"]), "groups": group_of.get(i, [])}}
                for i, e in enumerate(self.entries)]

    @classmethod
    def from_json(cls, doc: list) -> "CandidateList":
        out = cls()
        groups: dict = {}
        for i, e in enumerate(doc):
            tags = dict(e.get("tags", {}))
            for gi in tags.pop("groups", []):
                groups.setdefault(gi, []).append(i)
            out.add(np.array(e["mean"], dtype=float), np.array(e["cov"], dtype=float), **tags)
        out.groups = [groups[g] for g in sorted(groups)]
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "CandidateList":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --------------------------------------------------------------------------
# collapse and subspace


def random_collapse(t4: DenseTensor, k: int, alpha: float, eta: float,
                    rng: np.random.Generator, C: float = 1.0) -> CollapseDraw:
    """``S = sum_j a_j T4(., ., x_j, y_j)`` over ``4k`` Gaussian pairs, symmetrized."""
    if not (0 < alpha < 1 or alpha == 1) or not 0 < eta < 1:
        raise ValueError("alpha and eta must lie in (0, 1)")
    if t4.order != 4:
        raise ValueError("random_collapse needs the order-4 tensor")
    d = t4.dim
    D = C * k ** 4 / (alpha * math.sqrt(eta))
    xs = rng.standard_normal((4 * k, d))
    ys = rng.standard_normal((4 * k, d))
    a = rng.uniform(-D, D, size=4 * k)
    s = np.einsum("rsgh,jg,jh,j->rs", t4.data, xs, ys, a)
    return CollapseDraw(xs=xs, ys=ys, a=a, s_hat=0.5 * (s + s.T), D=D)


def _orthonormalize(cols: np.ndarray, weights: np.ndarray, d: int, max_dim: int | None):
    if cols.shape[1] == 0:
        return np.zeros((d, 0))
    u, s, _ = np.linalg.svd(cols, full_matrices=False)
    rank = int(np.sum(s > 1e-8))
    if max_dim is None or rank <= max_dim:
        return u[:, :rank]
    warnings.warn(f"search subspace of dimension {rank} truncated to {max_dim}", stacklevel=3)
    # keep the directions carrying the largest singular values
    u, _, _ = np.linalg.svd(cols * weights, full_matrices=False)
    return u[:, :max_dim]


def build_search_subspace(tensors, s_hat, lam: float, delta: float,
                          max_dim: int | None = None) -> SearchSubspace:
    """Orthonormal basis of ``V'``.

    ``V`` collects left singular vectors with singular value ``>= lam`` of the
    flattening of each tensor in ``tensors``; ``V'`` adds singular vectors of
    ``s_hat`` with singular value ``>= delta ** 0.25``.
    """
    if lam <= 0 or delta <= 0:
        raise ValueError("lam and delta must be positive")
    cols, weights, sources = [], [], []
    d = None
    for t in tensors:
        t = t if isinstance(t, DenseTensor) else DenseTensor(t)
        if t.order == 0:
            continue
        d = t.dim
        u, s, _ = np.linalg.svd(hermite.flatten(t).matrix, full_matrices=False)
        for j in np.flatnonzero(s >= lam):
            cols.append(u[:, j])
            weights.append(s[j])
            sources.append({"source": "tensor", "order": t.order, "singular_value": float(s[j])})
    if s_hat is not None:
        s_hat = np.asarray(s_hat, dtype=float)
        d = s_hat.shape[0]
        u, s, _ = np.linalg.svd(s_hat)
        for j in np.flatnonzero(s >= delta ** 0.25):
            cols.append(u[:, j])
            weights.append(s[j])
            sources.append({"source": "s_hat", "singular_value": float(s[j])})
    if d is None:
        raise ValueError("no tensors given")
    if not cols:
        return SearchSubspace(np.zeros((d, 0)), tuple(sources))
    M = np.stack(cols, axis=1)
    basis = _orthonormalize(M, np.asarray(weights), d, max_dim)
    return SearchSubspace(basis, tuple(sources))


# --------------------------------------------------------------------------
# cover enumeration


def grid_cover(dim: int, radius: float, step: float) -> np.ndarray:
    """Points ``step * z`` (integer ``z``) inside the closed ball of ``radius``; lexicographic."""
    if dim == 0:
        return np.zeros((1, 0))
    m = int(math.floor(radius / step + 1e-12))
    axis = np.arange(-m, m + 1) * step
    pts = np.array(list(itertools.product(axis, repeat=dim)))
    return pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]


def _cover_directions(dim: int, step: float) -> np.ndarray:
    pts = grid_cover(dim, 1.0, min(step, 1.0))
    pts = pts[np.linalg.norm(pts, axis=1) > 0]
    dirs = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    out = []
    for v in dirs:
        nz = v[np.abs(v) > 1e-12]
        if nz[0] < 0:
            continue  # v and -v give the same v v^T
        if not any(np.allclose(v, w) for w in out):
            out.append(v)
    return np.array(out).reshape(-1, dim)


def _cover_atoms(dim: int, step: float, phi: float):
    if dim == 0:
        return []
    dirs = _cover_directions(dim, step)
    m = int(math.floor(phi / step + 1e-12))
    taus = [j * step for j in range(-m, m + 1) if j != 0]
    return [(v, t) for v in dirs for t in taus]


def cover_size(dim: int, alpha: float, delta: float, phi: float, k_prime: int) -> int:
    """Closed-form number of candidates produced by :func:`enumerate_candidates`."""
    step = delta ** 0.25
    n_mu = len(grid_cover(dim, 2 / math.sqrt(alpha), step))
    n_atoms = len(_cover_atoms(dim, step, phi))
    return int(n_mu * comb(n_atoms + k_prime, k_prime, exact=True))


def enumerate_candidates(subspace: SearchSubspace, s_hat, alpha: float, delta: float,
                         phi: float, k: int, budget: int | None, C: float = 1.0) -> CandidateList:
    """Grid enumeration of ``(mu, I + S + sum_j tau_j v_j v_j^T)`` over ``V'``.

    ``mu`` ranges over a ``delta**0.25`` grid of the radius ``2/sqrt(alpha)``
    ball, and the correction is a multiset of at most ``C k^2`` atoms
    ``(v, tau)``. Enumeration order is deterministic; the list is truncated
    (``truncated = True``) once ``budget`` entries exist.
    """
    step = delta ** 0.25
    U = subspace.basis
    d = subspace.ambient
    s_hat = np.zeros((d, d)) if s_hat is None else np.asarray(s_hat, dtype=float)
    base = np.eye(d) + s_hat
    k_prime = int(max(1, round(C * k * k)))
    mus = grid_cover(subspace.dim, 2 / math.sqrt(alpha), step)
    atoms = _cover_atoms(subspace.dim, step, phi)
    lifted = [(U @ v, t) for v, t in atoms]
    out = CandidateList(budget=budget)
    opts = list(range(len(lifted))) + [None]
    for mu in mus:
        m_full = U @ mu
        for combo in itertools.combinations_with_replacement(opts, k_prime):
            cov = base.copy()
            for a in combo:
                if a is not None:
                    v, t = lifted[a]
                    cov += t * np.outer(v, v)
            if out.add(m_full, cov, source="cover") is None:
                return out
    return out


# --------------------------------------------------------------------------
# low-dimensional learner


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(X.shape[0])]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        p = d2 / d2.sum() if d2.sum() > 0 else None
        centers.append(X[rng.choice(X.shape[0], p=p)])
        d2 = np.minimum(d2, np.sum((X - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def merge_components(weights, means, covs, tol: float, C: float = 1.0):
    """Merge components whose TV upper bound is ``<= tol`` (moment-matched union)."""
    w = list(np.asarray(weights, dtype=float))
    mu = [np.asarray(m, dtype=float) for m in means]
    S = [np.asarray(c, dtype=float) for c in covs]
    merged = True
    while merged and len(w) > 1:
        merged = False
        for i, j in itertools.combinations(range(len(w)), 2):
            a, b = GaussianComponent(mu[i], S[i]), GaussianComponent(mu[j], S[j])
            if _sym_tv(a, b, C) <= tol:
                tot = w[i] + w[j]
                m = (w[i] * mu[i] + w[j] * mu[j]) / tot
                cov = (w[i] * (S[i] + np.outer(mu[i] - m, mu[i] - m))
                       + w[j] * (S[j] + np.outer(mu[j] - m, mu[j] - m))) / tot
                w[i], mu[i], S[i] = tot, m, 0.5 * (cov + cov.T)
                del w[j], mu[j], S[j]
                merged = True
                break
    return np.array(w), np.array(mu), np.array(S)


@dataclass
class LowDimFit:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    score: float
    converged: bool

    def as_tuple(self):
        return self.weights, self.means, self.covs


def _em_once(X, k, trim, rng, max_iter, tol, reg):
    n, r = X.shape
    means = _kmeanspp(X[rng.choice(n, size=min(n, 2000), replace=False)], k, rng)
    cov0 = np.cov(X, rowvar=False, bias=True).reshape(r, r) + reg * np.eye(r)
    covs = np.array([cov0] * k)
    w = np.full(k, 1.0 / k)
    prev = -np.inf
    converged = False
    n_keep = n - int(math.floor(trim * n))
    for _ in range(max_iter):
        logp = np.stack([math.log(max(w[i], 1e-300)) + component_logpdf(X, means[i], covs[i])
                         for i in range(k)], axis=1)
        ll = logsumexp(logp, axis=1)
        keep = np.sort(np.argpartition(-ll, n_keep - 1)[:n_keep]) if n_keep < n else slice(None)
        score = float(ll[keep].mean())
        resp = np.exp(logp[keep] - ll[keep, None])
        Xk = X[keep]
        nk = resp.sum(axis=0) + 1e-12
        w = nk / nk.sum()
        means = (resp.T @ Xk) / nk[:, None]
        for i in range(k):
            diff = Xk - means[i]
            covs[i] = (resp[:, i, None] * diff).T @ diff / nk[i] + reg * np.eye(r)
        if score - prev < tol:
            converged = True
            break
        prev = score
    return LowDimFit(w, means, covs, score, converged)


def low_dim_learn(points, k: int, eps1: float, rng: np.random.Generator,
                  n_restarts: int = 4, max_iter: int = 200, merge_tol: float | None = None,
                  tol: float = 1e-7, max_points: int | None = 20000) -> list[LowDimFit]:
    """Trimmed-EM learner for a ``k``-mixture in a low-dimensional space.

    Each restart seeds means by k-means++ and discards the ``2 eps1``
    fraction of points with the smallest mixture likelihood at every step.
    Components closer than ``merge_tol`` in TV upper bound are merged.
    Fits are returned best (highest trimmed log-likelihood) first. At most
    ``max_points`` randomly chosen points are used.
    """
    X = np.asarray(points, dtype=float)
    if max_points is not None and len(X) > max_points:
        X = X[np.sort(rng.choice(len(X), size=max_points, replace=False))]
    n, r = X.shape
    if r > 6:
        warnings.warn(f"low-dimensional learner run in dimension {r}", stacklevel=2)
    if merge_tol is None:
        merge_tol = 0.05 + 2 * eps1
    trim = min(2 * eps1, 0.4)
    if k == 1 or r == 0:
        n_keep = n - int(math.floor(trim * n))
        mu = X.mean(axis=0)
        cov = np.cov(X, rowvar=False, bias=True).reshape(r, r)
        return [LowDimFit(np.ones(1), mu[None], cov[None], 0.0, True)] if n_keep else []
    scale = float(np.trace(np.cov(X, rowvar=False, bias=True).reshape(r, r))) / max(r, 1)
    reg = 1e-6 * max(scale, 1e-12)
    fits = []
    for _ in range(n_restarts):
        fit = _em_once(X, k, trim, rng, max_iter, tol, reg)
        w, mu, cov = merge_components(fit.weights, fit.means, fit.covs, merge_tol)
        fits.append(LowDimFit(w, mu, cov, fit.score, fit.converged))
    fits.sort(key=lambda f: -f.score)
    return fits


# --------------------------------------------------------------------------
# assembly


def assemble_candidates(subspace: SearchSubspace, s_hat, low_dim_result,
                        out: CandidateList | None = None, **tags) -> CandidateList:
    """Lift subspace fits: ``mu = U m``, ``Sigma = U S U^T + (I + S_hat) - P (I + S_hat) P``.

    ``low_dim_result`` is an iterable of ``(weights, means, covs)`` tuples in
    subspace coordinates; each tuple becomes one group.
    """
    U = subspace.basis
    d = subspace.ambient
    s_hat = np.zeros((d, d)) if s_hat is None else np.asarray(s_hat, dtype=float)
    if subspace.dim == d:
        rest = np.zeros((d, d))
    else:
        P = U @ U.T
        base = np.eye(d) + s_hat
        rest = base - P @ base @ P
    out = CandidateList() if out is None else out
    for fit in low_dim_result:
        w, means, covs = fit.as_tuple() if isinstance(fit, LowDimFit) else fit
        comps = []
        for wi, m, c in zip(w, means, covs):
            cov = U @ np.asarray(c) @ U.T + rest
            cov = 0.5 * (cov + cov.T)
            vals, vecs = np.linalg.eigh(cov)
            if vals.min() < 0:
                cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
            comps.append((wi, U @ np.asarray(m), cov))
        out.add_group(comps, **tags)
    return out


# --------------------------------------------------------------------------
# moment fitting in the search subspace


def project_tensor(t: DenseTensor, U: np.ndarray) -> DenseTensor:
    """``T(U, ..., U)``: express a tensor in subspace coordinates."""
    data = t.data
    for _ in range(t.order):
        data = np.tensordot(data, U, axes=([0], [0]))
    return DenseTensor(data)


def _unpack(theta, k, r):
    logits = theta[:k]
    w = np.exp(logits - logits.max())
    w /= w.sum()
    means = theta[k:k + k * r].reshape(k, r)
    tril = np.tril_indices(r)
    Ls = theta[k + k * r:].reshape(k, -1)
    covs = np.empty((k, r, r))
    for i in range(k):
        L = np.zeros((r, r))
        L[tril] = Ls[i]
        covs[i] = L @ L.T
    return w, means, covs


def fit_moments(targets: dict, r: int, k: int, rng: np.random.Generator, n_starts: int = 8,
                mean_scale: float = 1.0, cov_spread: float = 0.5, tol: float = 1e-10,
                max_nfev: int = 400) -> list[LowDimFit]:
    """Least-squares fit of a ``k``-mixture to symmetric Hermite moment coordinates.

    ``targets`` maps order ``m`` to the isometric symmetric coordinates of the
    target tensor in ``R^r``. Residuals of order ``m`` are scaled by
    ``1/sqrt(m!)``. Returns the fits, lowest residual first; ``score`` is
    minus the final cost.
    """
    orders = sorted(targets)
    weights = {m: 1.0 / math.sqrt(math.factorial(m)) for m in orders}
    eye = np.eye(r)
    tril = np.tril_indices(r)

    def resid(theta):
        w, means, covs = _unpack(theta, k, r)
        out = []
        for m in orders:
            model = sum(w[i] * hermite.gaussian_hermite_sym(means[i], covs[i] - eye, m)
                        for i in range(k))
            out.append(weights[m] * (model - targets[m]))
        return np.concatenate(out)

    m1 = hermite.sym_to_dense(targets[1], r, 1).data if 1 in targets else np.zeros(r)
    fits = []
    for _ in range(n_starts):
        logits = 0.3 * rng.standard_normal(k)
        means = m1 + mean_scale * rng.standard_normal((k, r))
        Ls = []
        for _i in range(k):
            a = cov_spread * rng.standard_normal((r, r)) / math.sqrt(max(r, 1))
            c = eye + 0.5 * (a + a.T)
            vals, vecs = np.linalg.eigh(c)
            c = (vecs * np.clip(vals, 0.1, None)) @ vecs.T
            Ls.append(np.linalg.cholesky(c)[tril])
        theta0 = np.concatenate([logits, means.ravel(), np.concatenate(Ls)])
        try:
            res = least_squares(resid, theta0, method="trf", xtol=tol, ftol=tol, gtol=tol,
                                max_nfev=max_nfev)
        except (np.linalg.LinAlgError, ValueError):
            continue
        w, mu, cov = _unpack(res.x, k, r)
        fits.append(LowDimFit(w, mu, cov, -float(res.cost), bool(res.success)))
    fits.sort(key=lambda f: -f.score)
    return fits


# --------------------------------------------------------------------------
# orchestration


def robust_tensors(points, m_max: int, eps: float, rng: np.random.Generator,
                   threshold: float = 10.0) -> list[DenseTensor]:
    """Robust estimates of ``E h_m`` for ``m = 1..m_max`` (list index ``m - 1``)."""
    return [robust_tensor_mean(points, m, eps, rng, threshold=threshold)[0]
            for m in range(1, m_max + 1)]


def decode_from_tensors(tensors, k: int, alpha: float, rng: np.random.Generator, *,
                        params: dict, search: str = "moments", collapse_budget: int = 200,
                        cover_budget: int = 10_000, fresh_points=None, eps: float = 0.0,
                        max_dim: int | None = None, n_starts: int = 8,
                        low_dim_kwargs: dict | None = None, C_D: float = 1.0,
                        C_kprime: float = 1.0) -> tuple[CandidateList, dict]:
    """Candidate generation from (robust) Hermite tensors ``T_1..T_m``.

    Returns the candidate list and a diagnostics dict.
    """
    if search not in ("cover", "efficient", "moments"):
        raise ValueError(f"unknown search {search!r}")
    t4 = next(t for t in tensors if t.order == 4)
    d = t4.dim
    eta = params["eta"]
    n_rep = int(max(1, min(collapse_budget, math.ceil(params["ell_formula"]))))
    base_space = build_search_subspace(tensors, None, params["lambda"], params["delta"],
                                       max_dim=max_dim)
    out = CandidateList()
    diag = {"search": search, "collapse_reps": n_rep, "subspace_dims": [],
            "base_subspace_dim": base_space.dim, "truncated": False}
    seen_spaces: dict = {}
    per_draw = max(1, cover_budget // n_rep)
    for rep in range(n_rep):
        draw = random_collapse(t4, k, alpha, eta, rng, C=C_D)
        space = build_search_subspace(tensors, draw.s_hat, params["lambda"], params["delta"],
                                      max_dim=max_dim)
        diag["subspace_dims"].append(space.dim)
        if search == "cover":
            part = enumerate_candidates(space, draw.s_hat, alpha, params["delta"], params["phi"],
                                        k, per_draw, C=C_kprime)
            diag["truncated"] |= part.truncated
            for e in part.entries:
                out.add(e["mean"], e["cov"], **e["tags"], draw=rep)
            continue
        key = (np.round(space.basis @ space.basis.T, 6) + 0.0).tobytes()
        if key in seen_spaces:
            continue
        seen_spaces[key] = rep
        if search == "efficient":
            if fresh_points is None:
                raise ValueError("efficient search needs fresh points")
            Z = np.asarray(fresh_points) @ space.basis
            fits = low_dim_learn(Z, k, eps, rng, **(low_dim_kwargs or {}))
        else:
            U = space.basis
            targets = {t.order: hermite.dense_to_sym(project_tensor(t, U)) for t in tensors
                       if t.order >= 1}
            fits = fit_moments(targets, space.dim, k, rng, n_starts=n_starts,
                               mean_scale=1.0 / math.sqrt(alpha))
        for s_tag, s_hat in (("zero", None), ("collapse", draw.s_hat)):
            if s_hat is not None and space.dim == d:
                continue  # the complement is empty, so S_hat plays no role
            assemble_candidates(space, s_hat, fits, out=out, source=search, draw=rep,
                                complement=s_tag)
    return out, diag


def list_decode(points, k: int, alpha: float, eps: float, mode: str = "efficient",
                fresh_points=None, rng: np.random.Generator | None = None, *,
                m_max: int = 4, collapse_budget: int = 20, cover_budget: int = 10_000,
                Delta: float = 2.0, constants: dict | None = None, eta: float | None = None,
                eta_cap: float = 0.25, max_dim: int | None = None, tensors=None,
                trivial=None, n_starts: int = 8, low_dim_kwargs: dict | None = None,
                filter_threshold: float = 10.0) -> tuple[CandidateList, dict]:
    """List of candidate ``(mean, cov)`` pairs for the components of ``points``.

    ``points`` should be approximately isotropic. ``mode`` is ``cover``
    (grid enumeration), ``efficient`` (low-dimensional learner on
    ``fresh_points``) or ``moments`` (tensor moment fitting). The trivial
    candidate (robust mean, robust covariance) is always first.
    """
    rng = np.random.default_rng() if rng is None else rng
    if mode == "efficient" and fresh_points is None:
        raise ValueError("efficient mode requires fresh points")
    X = np.asarray(points, dtype=float)
    params = decode_parameters(k, alpha, eps, Delta, constants, eta=eta, eta_cap=eta_cap)
    if tensors is None:
        tensors = robust_tensors(X, m_max, eps, rng, threshold=filter_threshold)
    if trivial is None:
        cov, mu, _ = robust_cov_estimate(X, eps, rng, threshold=filter_threshold)
        trivial = (mu, cov)
    out = CandidateList()
    out.add(trivial[0], trivial[1], source="trivial")
    found, diag = decode_from_tensors(
        tensors, k, alpha, rng, params=params, search=mode, collapse_budget=collapse_budget,
        cover_budget=cover_budget, fresh_points=fresh_points, eps=eps, max_dim=max_dim,
        n_starts=n_starts, low_dim_kwargs=low_dim_kwargs,
        C_D=(constants or {}).get("alg3.2.D.C", 1.0),
        C_kprime=(constants or {}).get("alg3.2.kprime.C", 1.0))
    out.extend(found)
    n_before = len(out)
    out.dedupe(params["delta"] / 10)
    diag.update({"params": params, "n_candidates": len(out), "n_before_dedupe": n_before,
                 "m_max": m_max})
    return out, diag
