"""Adversary models that produce eps-corrupted samples, plus CSV sample I/O."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .mixture import GaussianMixture, sample_mixture

MODELS = ("huber", "tv", "strong")
STRATEGIES = ("far-cluster", "moment-attack", "density-swap")


@dataclass(frozen=True)
class ContaminationSpec:
    model: str = "strong"
    eps: float = 0.0
    strategy: str = "far-cluster"
    location_scale: float | None = None   # R; strategy-specific default when None
    direction: tuple | None = None        # target direction; strategy-specific default when None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown contamination model {self.model!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0 <= self.eps < 0.5:
            raise ValueError("eps must lie in [0, 1/2)")

    def to_dict(self) -> dict:
        return {"model": self.model, "eps": self.eps, "strategy": self.strategy,
                "location_scale": self.location_scale,
                "direction": None if self.direction is None else list(self.direction)}

    @classmethod
    def from_dict(cls, obj: dict) -> "ContaminationSpec":
        obj = dict(obj)
        if obj.get("direction") is not None:
            obj["direction"] = tuple(obj["direction"])
        return cls(**obj)


def _check_model(spec: ContaminationSpec, model: str) -> None:
    if spec.model != model:
        raise ValueError(f"spec.model is {spec.model!r}, expected {model!r}")


def huber_contaminate(x, spec: ContaminationSpec, noise: GaussianMixture,
                      rng: np.random.Generator):
    """Replace each point independently by a noise draw with probability eps.

    Returns ``(points, mask)``.
    """
    _check_model(spec, "huber")
    X = np.array(x, dtype=float, copy=True)
    mask = rng.random(X.shape[0]) < spec.eps
    if mask.any():
        X[mask] = sample_mixture(noise, int(mask.sum()), rng)[0]
    return X, mask


def tv_contaminate(m: GaussianMixture, spec: ContaminationSpec, n: int,
                   rng: np.random.Generator, noise: GaussianMixture | None = None):
    """i.i.d. draws from ``(1 - eps) m + eps noise``; returns ``(points, labels, mask)``.

    Noise draws carry label ``-1``. Without an explicit noise mixture a broad
    Gaussian centred far from ``m`` along its top principal axis is used.
    """
    _check_model(spec, "tv")
    if noise is None:
        noise = _default_noise(m, spec)
    points, labels = sample_mixture(m, n, rng)
    mask = rng.random(n) < spec.eps
    if mask.any():
        points[mask] = sample_mixture(noise, int(mask.sum()), rng)[0]
        labels[mask] = -1
    return points, labels, mask


def _default_noise(m: GaussianMixture, spec: ContaminationSpec) -> GaussianMixture:
    cov = m.covariance()
    vals, vecs = np.linalg.eigh(cov)
    u = vecs[:, -1] if spec.direction is None else _unit(spec.direction)
    R = 10.0 if spec.location_scale is None else spec.location_scale
    center = m.mean() + R * math.sqrt(max(vals[-1], 1e-12)) * u
    return GaussianMixture.single(center, 0.25 * cov + 1e-6 * np.eye(m.dim))


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _principal(X: np.ndarray):
    mu = X.mean(axis=0)
    vals, vecs = np.linalg.eigh(np.cov(X, rowvar=False, bias=True).reshape(X.shape[1], -1))
    return mu, vals, vecs


def strong_contaminate(x, spec: ContaminationSpec, rng: np.random.Generator):
    """Replace exactly ``floor(eps n)`` points by adversarial points built from ``x``.

    Returns ``(points, mask)``; unreplaced rows are bit-identical to ``x``.
    """
    _check_model(spec, "strong")
    X = np.array(x, dtype=float, copy=True)
    n, d = X.shape
    n_bad = int(math.floor(spec.eps * n))
    mask = np.zeros(n, dtype=bool)
    if n_bad < 1:
        if spec.eps > 0:
            warnings.warn("eps * n < 1: nothing to corrupt", stacklevel=2)
        return X, mask
    mu, vals, vecs = _principal(X)
    sd_top = math.sqrt(max(vals[-1], 1e-12))
    if spec.strategy == "far-cluster":
        u = vecs[:, -1] if spec.direction is None else _unit(spec.direction)
        R = 10.0 * sd_top if spec.location_scale is None else spec.location_scale
        idx = np.sort(rng.choice(n, size=n_bad, replace=False))
        jitter = rng.standard_normal((n_bad, d))
        jitter *= (0.5 * rng.random(n_bad) ** (1.0 / d) / np.linalg.norm(jitter, axis=1))[:, None]
        X[idx] = mu + R * u + jitter
    elif spec.strategy == "moment-attack":
        # a symmetric two-point spike along one direction inflates the fourth
        # Hermite moment along u while leaving the mean nearly unchanged
        u = _unit(rng.standard_normal(d)) if spec.direction is None else _unit(spec.direction)
        R = 4.0 if spec.location_scale is None else spec.location_scale
        sd_u = math.sqrt(max(float(u @ np.cov(X, rowvar=False, bias=True).reshape(d, d) @ u),
                             1e-12))
        idx = np.sort(rng.choice(n, size=n_bad, replace=False))
        signs = rng.choice([-1.0, 1.0], size=n_bad)
        X[idx] = mu + (signs * R * sd_u)[:, None] * u + 0.05 * rng.standard_normal((n_bad, d))
    else:  # density-swap
        cov = np.cov(X, rowvar=False, bias=True).reshape(d, d)
        prec = np.linalg.pinv(cov, hermitian=True)
        maha = np.einsum("ij,jk,ik->i", X - mu, prec, X - mu)
        order = np.argsort(maha, kind="stable")
        idx = np.sort(order[-n_bad:])
        donors = order[rng.integers(0, max(n_bad, 1), size=n_bad)]
        u = vecs[:, -1] if spec.direction is None else _unit(spec.direction)
        R = 3.0 * sd_top if spec.location_scale is None else spec.location_scale
        X[idx] = X[donors] + R * u
    mask[idx] = True
    return X, mask


def contaminate(points, labels, spec: ContaminationSpec, rng: np.random.Generator,
                noise: GaussianMixture | None = None, mixture: GaussianMixture | None = None):
    """Dispatch on ``spec.model`` for an already drawn clean sample.

    Returns ``(points, labels, mask)`` with corrupted labels set to ``-1``.
    The TV model needs the source ``mixture`` (it redraws the sample).
    """
    labels = np.array(labels, copy=True)
    if spec.model == "strong":
        pts, mask = strong_contaminate(points, spec, rng)
    elif spec.model == "huber":
        if noise is None:
            if mixture is None:
                raise ValueError("huber contamination needs a noise or source mixture")
            noise = _default_noise(mixture, spec)
        pts, mask = huber_contaminate(points, spec, noise, rng)
    else:
        if mixture is None:
            raise ValueError("tv contamination needs the source mixture")
        return tv_contaminate(mixture, spec, len(points), rng, noise)
    labels[mask] = -1
    return pts, labels, mask


def write_samples(path, points, labels=None, mask=None, seed: int | None = None) -> None:
    """CSV with columns ``x0..x{d-1}`` plus optional ``label``/``corrupted``."""
    points = np.atleast_2d(points)
    d = points.shape[1]
    header = [f"x{j}" for j in range(d)]
    if labels is not None:
        header.append("label")
    if mask is not None:
        header.append("corrupted")
    with open(path, "w", newline="") as fh:
        if seed is not None:
            fh.write(f"# seed: {seed}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(points):
            out = [repr(float(v)) for v in row]
            if labels is not None:
                out.append(int(labels[i]))
            if mask is not None:
                out.append(int(bool(mask[i])))
            w.writerow(out)


def read_samples(path) -> dict:
    """Inverse of :func:`write_samples`; returns a dict with points/labels/mask/seed."""
    seed = None
    with open(path, newline="") as fh:
        lines = [ln for ln in fh]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            if ln[1:].strip().startswith("seed:"):
                seed = int(ln.split(":", 1)[1])
            continue
        body.append(ln)
    reader = csv.reader(body)
    header = next(reader)
    rows = [r for r in reader if r]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    if not xcols:
        raise ValueError(f"{path}: no coordinate columns")
    points = np.array([[float(r[i]) for i in xcols] for r in rows]).reshape(len(rows), len(xcols))
    out = {"points": points, "labels": None, "mask": None, "seed": seed}
    if "label" in header:
        j = header.index("label")
        out["labels"] = np.array([int(r[j]) for r in rows], dtype=int)
    if "corrupted" in header:
        j = header.index("corrupted")
        out["mask"] = np.array([r[j] == "1" for r in rows], dtype=bool)
    return out
