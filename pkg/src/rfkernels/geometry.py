"""Hyperrectangles of the unit cube and partitions built from them.

A cell ``[a, b>`` is the product of intervals ``[a_j, b_j)``, except that an
interval whose upper end is 1 is closed. Every split uses the strict
``x_j < t`` / ``x_j >= t`` convention, so the two children of a cell are again
cells of this form and the leaves of any tree form a true partition.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _native

LOG_VOLUME_DIM = 30


class NotCoveredError(LookupError):
    """Raised when no leaf of a partition contains a query point."""


def _as_point(z, p: int | None = None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError(f"expected a 1-d point, got shape {z.shape}")
    if p is not None and z.shape[0] != p:
        raise ValueError(f"dimension mismatch: point has {z.shape[0]} coordinates, cell has {p}")
    return z


def _check_unit(Z: np.ndarray) -> None:
    if np.any(Z < 0.0) or np.any(Z > 1.0) or not np.all(np.isfinite(Z)):
        raise ValueError("points must lie in [0, 1]^p")


@dataclass(frozen=True, eq=False)
class Hyperrectangle:
    """Axis-aligned cell of ``[0, 1]^p``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same length")
        if np.any(lo < 0.0) or np.any(hi > 1.0) or np.any(lo >= hi):
            raise ValueError("need 0 <= lower < upper <= 1 on every axis")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, p: int) -> "Hyperrectangle":
        return cls(np.zeros(p), np.ones(p))

    @property
    def p(self) -> int:
        return self.lower.shape[0]

    def volume(self) -> float:
        widths = self.upper - self.lower
        if self.p > LOG_VOLUME_DIM:
            return float(np.exp(np.sum(np.log(widths))))
        return float(np.prod(widths))

    def __eq__(self, other):
        if not isinstance(other, Hyperrectangle):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self):
        parts = []
        for a, b in zip(self.lower, self.upper):
            parts.append(f"[{a:g},{b:g}{']' if b == 1.0 else ')'}")
        return "Hyperrectangle(" + "x".join(parts) + ")"


def contains(rect: Hyperrectangle, z) -> bool:
    """Membership of ``z`` in ``rect`` under the closed-at-1 convention."""
    z = _as_point(z, rect.p)
    above = z >= rect.lower
    below = (z < rect.upper) | ((rect.upper == 1.0) & (z <= 1.0))
    return bool(np.all(above & below))


def contains_many(lower: np.ndarray, upper: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Boolean (s, L) matrix: row i, column l is ``Z[i] in [lower[l], upper[l]>``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    lo = lower[None, :, :]
    hi = upper[None, :, :]
    zz = Z[:, None, :]
    inside = (zz >= lo) & ((zz < hi) | ((hi == 1.0) & (zz <= 1.0)))
    return inside.all(axis=2)


def split(rect: Hyperrectangle, j: int, u: float) -> tuple[Hyperrectangle, Hyperrectangle]:
    """Cut ``rect`` along axis ``j`` (0-based) at ``a_j + u (b_j - a_j)``.

    The first child keeps ``x_j < t`` and the second ``x_j >= t``.
    """
    if not 0 <= j < rect.p:
        raise ValueError(f"axis {j} out of range for p={rect.p}")
    if not 0.0 < u < 1.0:
        raise ValueError("split fraction must lie in (0, 1)")
    a, b = rect.lower[j], rect.upper[j]
    t = a + u * (b - a)
    if not a < t < b:
        raise ValueError("split fraction too close to the cell boundary")
    up0 = rect.upper.copy()
    up0[j] = t
    lo1 = rect.lower.copy()
    lo1[j] = t
    return Hyperrectangle(rect.lower, up0), Hyperrectangle(lo1, rect.upper)


def rho_distance(r1: Hyperrectangle, r2: Hyperrectangle) -> float:
    """Sup-distance between corner vectors of two cells."""
    if r1.p != r2.p:
        raise ValueError("dimension mismatch")
    return float(max(np.max(np.abs(r1.lower - r2.lower)), np.max(np.abs(r1.upper - r2.upper))))


@dataclass(frozen=True, eq=False)
class NodeTable:
    """Split record of a binary tree stored as flat arrays.

    ``feature[v] == -1`` marks a leaf; ``leaf[v]`` is then its index in the
    partition. Child ids in ``left``/``right`` are local to the table.
    """

    feature: np.ndarray
    threshold: np.ndarray
    frac: np.ndarray
    left: np.ndarray
    right: np.ndarray
    gain: np.ndarray
    depth: np.ndarray
    leaf: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def internal(self) -> np.ndarray:
        return np.flatnonzero(self.feature >= 0)

    def words(self) -> list[str]:
        """Node words in {0,1}^* (root is the empty word)."""
        out = [""] * self.n_nodes
        for v in range(self.n_nodes):
            if self.feature[v] >= 0:
                out[self.left[v]] = out[v] + "0"
                out[self.right[v]] = out[v] + "1"
        return out


class Partition:
    """Finite set of pairwise disjoint cells covering ``[0, 1]^p``.

    Leaves are stored as two ``(L, p)`` corner arrays; :attr:`leaves` builds
    :class:`Hyperrectangle` objects on demand. When the partition came out of
    a tree, ``nodes`` holds the split record and drives fast point location.
    """

    def __init__(self, lower, upper, depth: int, nodes: NodeTable | None = None):
        lower = np.array(lower, dtype=float, ndmin=2)
        upper = np.array(upper, dtype=float, ndmin=2)
        if lower.shape != upper.shape:
            raise ValueError("corner arrays differ in shape")
        if depth < 0:
            raise ValueError("depth must be >= 0")
        lower.flags.writeable = False
        upper.flags.writeable = False
        self.lower = lower
        self.upper = upper
        self.depth = int(depth)
        self.nodes = nodes

    @classmethod
    def from_leaves(cls, leaves: Sequence[Hyperrectangle], depth: int) -> "Partition":
        lower = np.stack([r.lower for r in leaves])
        upper = np.stack([r.upper for r in leaves])
        return cls(lower, upper, depth)

    @classmethod
    def trivial(cls, p: int) -> "Partition":
        return cls(np.zeros((1, p)), np.ones((1, p)), 0)

    @property
    def p(self) -> int:
        return self.lower.shape[1]

    def __len__(self) -> int:
        return self.lower.shape[0]

    @cached_property
    def leaves(self) -> tuple[Hyperrectangle, ...]:
        return tuple(Hyperrectangle(lo, hi) for lo, hi in zip(self.lower, self.upper))

    def volumes(self) -> np.ndarray:
        widths = self.upper - self.lower
        if self.p > LOG_VOLUME_DIM:
            return np.exp(np.log(widths).sum(axis=1))
        return widths.prod(axis=1)

    def locate_many(self, Z) -> np.ndarray:
        """Leaf index of every row of ``Z``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.p:
            raise ValueError(f"dimension mismatch: points have {Z.shape[1]} coordinates, partition {self.p}")
        if self.nodes is not None:
            nd = self.nodes
            offset = np.array([0, nd.n_nodes], dtype=np.int64)
            Zc = np.ascontiguousarray(Z)
            ids = _native.apply_packed(Zc, nd.feature, nd.threshold, nd.left, nd.right, offset, nd.leaf)
            return ids[:, 0]
        inside = contains_many(self.lower, self.upper, Z)
        hits = inside.sum(axis=1)
        if np.any(hits == 0):
            bad = Z[np.flatnonzero(hits == 0)[0]]
            raise NotCoveredError(f"point {bad} is not covered by any leaf")
        return inside.argmax(axis=1)


def locate(partition: Partition, z) -> int:
    """Index of the unique leaf containing ``z``."""
    z = _as_point(z, partition.p)
    if np.any(z < 0.0) or np.any(z > 1.0):
        raise NotCoveredError(f"point {z} lies outside the unit cube")
    return int(partition.locate_many(z[None, :])[0])


def check_partition(partition: Partition, n_probes: int = 10_000, rng=None, tol: float = 1e-12) -> None:
    """Raise ``ValueError`` unless ``partition`` looks like a valid partition.

    Volumes must sum to 1 and uniform probes must each fall in exactly one leaf.
    The depth bound ``|leaves| <= 2^depth`` is also enforced.
    """
    rng = np.random.default_rng(rng)
    if len(partition) > 2 ** partition.depth:
        raise ValueError("more leaves than 2^depth")
    total = partition.volumes().sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"leaf volumes sum to {total!r}")
    Z = rng.random((n_probes, partition.p))
    hits = np.zeros(n_probes, dtype=np.int64)
    for lo in range(0, len(partition), 32):
        sl = slice(lo, lo + 32)
        hits += contains_many(partition.lower[sl], partition.upper[sl], Z).sum(axis=1)
    if np.any(hits != 1):
        raise ValueError("probe points covered by zero or several leaves")
