"""Separate thin components with a one-dimensional piecewise-constant rule ``F(x) = f(v.x)``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SeparatorError(ValueError):
    """The candidate parameters admit neither a variance gap nor a mean gap."""


@dataclass(frozen=True)
class Separator:
    direction: np.ndarray
    kind: str                       # "variance-gap" or "mean-gap"
    intervals: tuple = ()           # (center, half_width) pairs, variance-gap only
    threshold: float | None = None  # mean-gap only
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("separator direction must be a unit vector")
        if self.kind not in ("variance-gap", "mean-gap"):
            raise ValueError(f"unknown separator kind {self.kind!r}")
        object.__setattr__(self, "direction", v)

    def value(self, points) -> np.ndarray:
        """``F(x)`` for every row of ``points`` (boolean)."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) @ self.direction
        if self.kind == "mean-gap":
            return p > self.threshold
        out = np.zeros(p.shape[0], dtype=bool)
        for c, w in self.intervals:
            out |= np.abs(p - c) <= w
        return out


def _params(hyp):
    means, covs = [], []
    for h in hyp:
        if hasattr(h, "mean") and hasattr(h, "cov"):
            means.append(np.asarray(h.mean, dtype=float))
            covs.append(np.asarray(h.cov, dtype=float))
        else:
            means.append(np.asarray(h[0], dtype=float))
            covs.append(np.asarray(h[1], dtype=float))
    return means, covs


def find_thin_direction(hyp, eta: float):
    """Smallest-eigenvalue direction over all candidate covariances if it is below ``2 eta``.

    Returns ``(v, s)`` with ``s`` the (0-based) index of the owning candidate,
    or ``None``. Ties go to the lowest index.
    """
    _, covs = _params(hyp)
    best = None
    for s, cov in enumerate(covs):
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        if best is None or vals[0] < best[0]:
            best = (vals[0], vecs[:, 0], s)
    if best is None or best[0] >= 2 * eta:
        return None
    v = best[1] / np.linalg.norm(best[1])
    return v, best[2]


def build_separator(hyp, v, eta: float, k: int, C: float = 0.25, width_mult: float = 1.0,
                    n_scan: int = 1000, mean_gap: float | None = None) -> Separator:
    """Variance-gap or mean-gap separator along ``v``.

    Variance gap (some projected variance exceeds ``sqrt(eta)``): the smallest
    ``t`` on a log grid of ``(2 eta, sqrt(eta))`` such that no projected
    variance lies in ``(t, t C eta^(-1/(2k)))``. Each component with projected
    variance at most ``t`` contributes the interval centred at its projected
    mean with half-width ``width_mult sqrt(t) log(1/eta)``.

    Mean gap (all projected variances at most ``sqrt(eta)``): the threshold
    is the midpoint of the widest gap between sorted projected means, and
    must be at least ``1/(20k)`` from every projected mean.
    """
    means, covs = _params(hyp)
    if k < 2 or len(means) < 2:
        raise SeparatorError("need at least two components to separate")
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    pv = np.array([float(v @ c @ v) for c in covs])
    pm = np.array([float(v @ m) for m in means])
    lo, hi = 2 * eta, math.sqrt(eta)
    if np.any(pv > hi):
        factor = C * eta ** (-1.0 / (2 * k))
        grid = np.exp(np.linspace(math.log(lo), math.log(hi), n_scan + 2)[1:-1])
        for t in grid:
            if not np.any((pv > t) & (pv < t * factor)):
                break
        else:
            raise SeparatorError("no variance gap found in (2 eta, sqrt(eta))")
        half = width_mult * math.sqrt(t) * math.log(1 / eta)
        thin = np.flatnonzero(pv <= t)
        if thin.size == 0:
            raise SeparatorError("no component is thin at the selected threshold")
        intervals = tuple((float(pm[j]), half) for j in thin)
        return Separator(v, "variance-gap", intervals=intervals,
                         info={"t": float(t), "band": (float(t), float(t * factor)),
                               "projected_variances": pv.tolist(), "C": C,
                               "width_mult": width_mult})
    order = np.sort(pm)
    gaps = np.diff(order)
    j = int(np.argmax(gaps))
    t = 0.5 * (order[j] + order[j + 1])
    need = 1.0 / (20 * k) if mean_gap is None else mean_gap
    if np.min(np.abs(pm - t)) < need:
        raise SeparatorError("projected means too close for a mean gap")
    return Separator(v, "mean-gap", threshold=float(t),
                     info={"projected_means": pm.tolist(), "min_distance": need})


def separator_gap_ok(sep: Separator, hyp) -> bool:
    """Check the constructed gap property exactly."""
    means, covs = _params(hyp)
    v = sep.direction
    if sep.kind == "mean-gap":
        need = sep.info["min_distance"]
        return all(abs(float(v @ m) - sep.threshold) >= need for m in means)
    lo, hi = sep.info["band"]
    return not any(lo < float(v @ c @ v) < hi for c in covs)


def apply_separator(sep: Separator, points):
    """Indices with ``F = 1`` and with ``F = 0``."""
    f = sep.value(points)
    return np.flatnonzero(f), np.flatnonzero(~f)
