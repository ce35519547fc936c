"""Dense symmetric tensors and Hermite tensor calculus.

Tensors are plain ``numpy`` arrays of shape ``(d,) * m`` wrapped in
:class:`DenseTensor`. Partition plans (partitions of ``[m]`` into singletons
and pairs) are enumerated once per order and cached.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import hermite_e

MAX_ENTRIES = 10 ** 8
MAX_ORDER = 8


class TensorSizeError(MemoryError):
    pass


def _guard(d: int, m: int, max_entries: int = MAX_ENTRIES) -> None:
    size = d ** m
    if size > max_entries:
        raise TensorSizeError(
            f"order-{m} tensor over R^{d} needs {size} entries (guard {max_entries})")


@dataclass(frozen=True)
class DenseTensor:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim and len(set(arr.shape)) != 1:
            raise ValueError(f"tensor must be cubical, got shape {arr.shape}")
        _guard(arr.shape[0] if arr.ndim else 1, arr.ndim)
        object.__setattr__(self, "data", arr)

    @property
    def order(self) -> int:
        return self.data.ndim

    @property
    def dim(self) -> int:
        return self.data.shape[0] if self.data.ndim else 0

    def norm(self) -> float:
        return float(np.linalg.norm(self.data.ravel()))

    def __add__(self, other):
        return DenseTensor(self.data + other.data)

    def __sub__(self, other):
        return DenseTensor(self.data - other.data)

    def __mul__(self, c):
        return DenseTensor(self.data * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class FlatTensor:
    matrix: np.ndarray

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]


@lru_cache(maxsize=None)
def pair_partitions(m: int) -> tuple:
    """All partitions of ``range(m)`` into pairs and singletons.

    Each entry is ``(pairs, singletons)`` with pairs as sorted 2-tuples.
    """
    if m > MAX_ORDER:
        raise TensorSizeError(f"order {m} exceeds the supported maximum {MAX_ORDER}")

    def rec(items):
        if not items:
            yield (), ()
            return
        first, rest = items[0], items[1:]
        for pairs, singles in rec(rest):
            yield pairs, (first,) + singles
        for idx, partner in enumerate(rest):
            remaining = rest[:idx] + rest[idx + 1:]
            for pairs, singles in rec(remaining):
                yield ((first, partner),) + pairs, singles

    return tuple(rec(tuple(range(m))))


def _partition_sum(m: int, pair_factor: np.ndarray, single_factor: np.ndarray) -> np.ndarray:
    d = single_factor.size
    _guard(d, m)
    out = np.zeros((d,) * m)
    for pairs, singles in pair_partitions(m):
        factors = [pair_factor] * len(pairs) + [single_factor] * len(singles)
        axes = [a for p in pairs for a in p] + list(singles)
        if factors:
            term = factors[0]
            for f in factors[1:]:
                term = np.multiply.outer(term, f)
        else:
            term = np.array(1.0)
        out += np.transpose(term, np.argsort(axes))
    return out


def hermite_tensor_of_point(x, m: int) -> DenseTensor:
    """``h_m(x)``: pairs contribute ``-I``, singletons contribute ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if m == 0:
        return DenseTensor(np.array(1.0))
    return DenseTensor(_partition_sum(m, -np.eye(x.size), x))


def gaussian_hermite_moment(mean, shift_cov, m: int) -> np.ndarray:
    """``E h_m(G)`` for ``G ~ N(mean, I + shift_cov)`` as a dense array."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    if m == 0:
        return np.array(1.0)
    return _partition_sum(m, np.asarray(shift_cov, dtype=float), mean)


def expected_hermite(c, m: int) -> DenseTensor:
    """Expected Hermite tensor of a component or a mixture (weighted sum)."""
    from .mixture import GaussianComponent, GaussianMixture

    if isinstance(c, GaussianComponent):
        return DenseTensor(gaussian_hermite_moment(c.mean, c.cov - np.eye(c.dim), m))
    if isinstance(c, GaussianMixture):
        eye = np.eye(c.dim)
        total = sum(w * gaussian_hermite_moment(comp.mean, comp.cov - eye, m)
                    for w, comp in zip(c.weights, c.components))
        return DenseTensor(total)
    raise TypeError(f"expected a GaussianComponent or GaussianMixture, got {type(c)!r}")


def symmetrize(t: DenseTensor) -> DenseTensor:
    m = t.order
    if m <= 1:
        return t
    acc = np.zeros_like(t.data)
    for perm in itertools.permutations(range(m)):
        acc += np.transpose(t.data, perm)
    return DenseTensor(acc / math.factorial(m))


def collapse_modes(t: DenseTensor, x, y) -> np.ndarray:
    """Contract the last two modes of an order-4 tensor with ``x`` and ``y``."""
    if t.order != 4:
        raise ValueError("collapse_modes needs an order-4 tensor")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (t.dim,) or y.shape != (t.dim,):
        raise ValueError("collapse vectors must match the tensor dimension")
    return np.einsum("rsgh,g,h->rs", t.data, x, y)


def flatten(t: DenseTensor) -> FlatTensor:
    if t.order == 0:
        return FlatTensor(t.data.reshape(1, 1))
    return FlatTensor(t.data.reshape(t.dim, -1))


def unflatten(f: FlatTensor, order: int) -> DenseTensor:
    return DenseTensor(f.matrix.reshape((f.rows,) * order))


def outer_power(v, m: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.array(1.0)
    for _ in range(m):
        out = np.multiply.outer(out, v)
    return out


def _basis_change(tensors, pair_sign: float):
    d = None
    for t in tensors[1:]:
        d = np.asarray(t.data if isinstance(t, DenseTensor) else t).shape[0]
        break
    out = [DenseTensor(np.asarray(tensors[0].data if isinstance(tensors[0], DenseTensor)
                                  else tensors[0], dtype=float))]
    arrays = [np.asarray(t.data if isinstance(t, DenseTensor) else t, dtype=float)
              for t in tensors]
    for j, arr in enumerate(arrays):
        if arr.ndim != j:
            raise ValueError(f"tensor at position {j} has order {arr.ndim}")
    for m in range(1, len(arrays)):
        _guard(d, m)
        eye = pair_sign * np.eye(d)
        acc = np.zeros((d,) * m)
        for pairs, singles in pair_partitions(m):
            term = arrays[len(singles)]
            for _ in pairs:
                term = np.multiply.outer(term, eye)
            axes = list(singles) + [a for p in pairs for a in p]
            acc += np.transpose(term, np.argsort(axes))
        out.append(DenseTensor(acc))
    return out


def raw_to_hermite(raw_moments) -> list[DenseTensor]:
    """Hermite moments ``E h_m`` from raw moments ``E x^{(x)j}`` for orders ``0..m``.

    ``raw_moments[j]`` must be the order-``j`` tensor; index 0 is the scalar 1.
    """
    if len(raw_moments) < 2:
        raise ValueError("need raw moments of order 0 and 1 at least")
    return _basis_change(list(raw_moments), -1.0)


def hermite_to_raw(hermite_moments) -> list[DenseTensor]:
    """Inverse of :func:`raw_to_hermite` (pairs contribute ``+I``)."""
    if len(hermite_moments) < 2:
        raise ValueError("need Hermite moments of order 0 and 1 at least")
    return _basis_change(list(hermite_moments), 1.0)


def hermite_raw_roundtrip(moments, inverse: bool = False) -> list[DenseTensor]:
    return hermite_to_raw(moments) if inverse else raw_to_hermite(moments)


# Symmetric (unique-entry) representation. Entry for a sorted multi-index is
# scaled by sqrt(multiplicity) so Euclidean norms equal Frobenius norms of
# the full symmetric tensor.

@lru_cache(maxsize=None)
def sym_index(d: int, m: int):
    idx = np.array(list(itertools.combinations_with_replacement(range(d), m)),
                   dtype=np.intp).reshape(-1, m)
    counts = np.zeros((idx.shape[0], d), dtype=np.intp)
    for j in range(m):
        np.add.at(counts, (np.arange(idx.shape[0]), idx[:, j]), 1)
    mult = np.array([math.factorial(m) / np.prod([math.factorial(c) for c in row])
                     for row in counts])
    return idx, counts, np.sqrt(mult)


def hermite_features(points: np.ndarray, m: int) -> np.ndarray:
    """Isometric symmetric coordinates of ``h_m(x)`` for every row of ``points``.

    Uses that entry ``(i_1..i_m)`` of ``h_m(x)`` factors as
    ``prod_j He_{c_j}(x_j)`` where ``c_j`` counts index ``j``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = pts.shape
    _, counts, scale = sym_index(d, m)
    he = np.empty((m + 1, n, d))
    for order in range(m + 1):
        coef = np.zeros(order + 1)
        coef[order] = 1.0
        he[order] = hermite_e.hermeval(pts, coef)
    out = np.ones((n, counts.shape[0]))
    for j in range(d):
        out *= he[counts[:, j], :, j].T
    return out * scale


def sym_to_dense(vec: np.ndarray, d: int, m: int) -> DenseTensor:
    idx, _, scale = sym_index(d, m)
    vals = np.asarray(vec) / scale
    out = np.zeros((d,) * m)
    for row, v in zip(idx, vals):
        for perm in set(itertools.permutations(row)):
            out[perm] = v
    return DenseTensor(out)


def dense_to_sym(t: DenseTensor) -> np.ndarray:
    idx, _, scale = sym_index(t.dim, t.order)
    return t.data[tuple(idx.T)] * scale


def gaussian_hermite_sym(mean, shift_cov, m: int) -> np.ndarray:
    """Symmetric coordinates of ``E h_m(N(mean, I + shift_cov))`` without dense tensors."""
    mean = np.asarray(mean, dtype=float)
    shift_cov = np.asarray(shift_cov, dtype=float)
    idx, _, scale = sym_index(mean.size, m)
    total = np.zeros(idx.shape[0])
    for pairs, singles in pair_partitions(m):
        term = np.ones(idx.shape[0])
        for a, b in pairs:
            term = term * shift_cov[idx[:, a], idx[:, b]]
        for c in singles:
            term = term * mean[idx[:, c]]
        total += term
    return total * scale
