"""Sparse vocabulary-space vectors, the elu1p activation and top-k gating."""

from __future__ import annotations

from typing import Iterable

import numpy as np

GateMask = np.ndarray  # sorted, unique int64 dimension ids


class SparseVector:
    """Canonical sparse vector: strictly increasing dims, no zero weights.

    The constructor trusts its arguments; use :meth:`from_pairs` or
    :meth:`from_dense` for unsorted or unfiltered input.
    """

    __slots__ = ("dims", "weights")

    def __init__(self, dims: np.ndarray, weights: np.ndarray):
        self.dims = np.asarray(dims, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.dims.shape != self.weights.shape or self.dims.ndim != 1:
            raise ValueError("dims and weights must be 1-d arrays of equal length")

    @classmethod
    def empty(cls) -> SparseVector:
        return cls(np.empty(0, np.int64), np.empty(0))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> SparseVector:
        acc: dict[int, float] = {}
        for dim, w in pairs:
            if dim in acc:
                raise ValueError(f"duplicate dimension {dim}")
            if w < 0:
                raise ValueError(f"negative weight {w} at dimension {dim}")
            acc[int(dim)] = float(w)
        dims = np.array(sorted(d for d, w in acc.items() if w != 0.0), dtype=np.int64)
        return cls(dims, np.array([acc[d] for d in dims.tolist()]))

    @classmethod
    def from_dense(cls, values: np.ndarray) -> SparseVector:
        values = np.asarray(values, dtype=np.float64)
        dims = np.flatnonzero(values)
        return cls(dims, values[dims])

    def to_dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.dims] = self.weights
        return out

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.dims.tolist(), self.weights.tolist()))

    def scale(self, c: float) -> SparseVector:
        if c < 0:
            raise ValueError("scale factor must be nonnegative")
        if c == 0:
            return SparseVector.empty()
        return SparseVector(self.dims.copy(), self.weights * c)

    def __len__(self) -> int:
        return int(self.dims.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.dims, other.dims) and np.array_equal(self.weights, other.weights)

    def __repr__(self) -> str:
        return f"SparseVector({self.pairs()!r})"


def elu1p(x):
    """x + 1 for x >= 0, exp(x) otherwise. Works on scalars and arrays."""
    if np.ndim(x) == 0:
        x = float(x)
        return x + 1.0 if x >= 0 else float(np.exp(x))
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def elu1p_grad(x):
    if np.ndim(x) == 0:
        x = float(x)
        return 1.0 if x >= 0 else float(np.exp(x))
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    # subgradient 0 at 0
    return (np.asarray(x) > 0).astype(np.float64)


ACTIVATIONS = {
    "elu1p": (elu1p, elu1p_grad),
    "relu": (relu, relu_grad),
}


def top_k_dims(values: np.ndarray, k: int) -> GateMask:
    """Dimensions holding the k largest values; ties go to the lower id."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if k == 0:
        return np.empty(0, np.int64)
    if k >= n:
        return np.arange(n, dtype=np.int64)
    # stable sort on -values keeps lower ids first among equal values
    order = np.argsort(-values, kind="stable")
    return np.sort(order[:k]).astype(np.int64)


def gate_union(a: GateMask, b: GateMask) -> GateMask:
    return np.union1d(np.asarray(a, np.int64), np.asarray(b, np.int64)).astype(np.int64)


def apply_gate(values: np.ndarray, gate: GateMask) -> SparseVector:
    gate = np.asarray(gate, dtype=np.int64)
    w = np.asarray(values, dtype=np.float64)[gate]
    keep = w != 0.0
    return SparseVector(gate[keep], w[keep])


def dot(a: SparseVector, b: SparseVector) -> float:
    """Sum of weight products over shared dimensions, in ascending dim order."""
    da, db = a.dims.tolist(), b.dims.tolist()
    wa, wb = a.weights.tolist(), b.weights.tolist()
    i = j = 0
    total = 0.0
    while i < len(da) and j < len(db):
        if da[i] == db[j]:
            total += wa[i] * wb[j]
            i += 1
            j += 1
        elif da[i] < db[j]:
            i += 1
        else:
            j += 1
    return total


def l2_normalize(a: SparseVector) -> SparseVector:
    if len(a) == 0:
        raise ValueError("cannot normalize zero vector")
    norm = float(np.sqrt(np.dot(a.weights, a.weights)))
    if norm == 0.0:
        raise ValueError("cannot normalize zero vector")
    return SparseVector(a.dims.copy(), a.weights / norm)
