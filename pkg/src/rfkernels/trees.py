"""Random recursive partitioning and histogram leaf fitting.

Four growers share one compiled routine:

* ``uniform``: axis and split fraction drawn uniformly, ignoring the data.
* ``extra_trees``: ``max_features`` random axes with one random threshold
  each; the best scoring candidate wins.
* ``softmax``: ``K`` random (axis, fraction) candidates; one is drawn with
  probability proportional to ``exp(beta * score)``.
* ``breiman_greedy``: exhaustive midpoint search over ``max_features`` random
  axes, optionally on a bootstrap resample.

Bootstrap resampling only ever affects split scoring. Leaf values are always
fitted on the full data.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np

from . import _native
from .geometry import NodeTable, Partition

Strategy = Literal["uniform", "extra_trees", "softmax", "breiman_greedy"]

_STRATEGY_CODES = {
    "uniform": _native.UNIFORM,
    "extra_trees": _native.EXTRA_TREES,
    "softmax": _native.SOFTMAX,
    "breiman_greedy": _native.BREIMAN,
}
_SUPPORT_CODES = {"cell": _native.SUPPORT_CELL, "samples": _native.SUPPORT_SAMPLES}

MAX_FULL_DEPTH = 24


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates in ``[0, 1]^p`` and a response; the empirical measure P_n."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(np.array(self.X, dtype=float, ndmin=2))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float).reshape(-1))
        if X.shape[0] < 1:
            raise ValueError("empty dataset")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not np.all(np.isfinite(X)) or X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("covariates must lie in [0, 1]; rescale before building trees")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.X.shape, dtype=np.int64).tobytes())
        h.update(self.X.tobytes())
        h.update(self.y.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class GrowConfig:
    """Hyperparameters of a randomized tree.

    ``max_depth=None`` grows until the data stops it; the ``uniform`` grower
    and the unfiltered ``softmax`` grower need a finite depth. ``max_features``
    defaults to ``p``. ``threshold_support`` chooses where Extra-Trees draws
    thresholds: uniformly over the cell (``"cell"``) or between the node's
    sample extremes (``"samples"``). ``filter_candidates`` only matters for
    ``softmax``; the greedy growers always drop candidates that violate
    ``min_samples_leaf``.
    """

    strategy: Strategy = "extra_trees"
    max_depth: int | None = None
    n_candidates: int = 1
    beta: float = 0.0
    max_features: int | None = None
    min_samples_leaf: int = 1
    min_impurity_decrease: float = 0.0
    bootstrap: bool = False
    filter_candidates: bool = True
    threshold_support: Literal["cell", "samples"] = "cell"
    stop_on_pure: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in _STRATEGY_CODES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_impurity_decrease < 0:
            raise ValueError("min_impurity_decrease must be >= 0")
        if self.threshold_support not in _SUPPORT_CODES:
            raise ValueError(f"unknown threshold_support {self.threshold_support!r}")
        if self.strategy == "uniform" and self.n_candidates != 1:
            object.__setattr__(self, "n_candidates", 1)
        if self.unbounded and (self.max_depth is None or self.max_depth > MAX_FULL_DEPTH):
            raise ValueError(f"{self.strategy} trees need max_depth <= {MAX_FULL_DEPTH}")

    @property
    def unbounded(self) -> bool:
        """True when leaf count is not limited by the data."""
        return self.strategy == "uniform" or (self.strategy == "softmax" and not self.filter_candidates)

    def features_for(self, p: int) -> int:
        return p if self.max_features is None else min(self.max_features, p)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class SplitScheme:
    """Per-internal-node ``(axis, fraction)`` record, keyed by node word."""

    entries: dict[str, tuple[int, float]]
    depth: int

    def __eq__(self, other):
        if not isinstance(other, SplitScheme):
            return NotImplemented
        return self.depth == other.depth and self.entries == other.entries

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class FittedTree:
    """A partition together with histogram leaf values.

    ``leaf_value[l]`` is the mean target over training points in leaf ``l``
    (0 for an empty leaf) and ``leaf_count[l]`` the number of those points.
    ``train_ids`` optionally caches the leaf of every training point.
    """

    partition: Partition
    scheme: SplitScheme | None
    leaf_value: np.ndarray
    leaf_count: np.ndarray
    n: int
    train_ids: np.ndarray | None = None

    @property
    def n_leaves(self) -> int:
        return len(self.partition)

    @property
    def leaf_mass(self) -> np.ndarray:
        return self.leaf_count / self.n

    def apply(self, Z) -> np.ndarray:
        return self.partition.locate_many(Z)

    def predict(self, Z) -> np.ndarray:
        return self.leaf_value[self.apply(Z)]

    def split_gains(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis and score gain of every internal node (empty if unknown)."""
        nodes = self.partition.nodes
        if nodes is None:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        inner = nodes.internal
        return nodes.feature[inner], nodes.gain[inner]


def derive_seed(rng) -> int:
    """32-bit seed for the compiled grower from an int or a ``Generator``."""
    if rng is None:
        rng = 0
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**32))
    return int(np.random.SeedSequence(int(rng)).generate_state(1)[0])


def tree_seeds(master: int, count: int, stream: int = 0) -> np.ndarray:
    """Independent per-tree seeds derived from ``(master, stream)``.

    Tree ``m`` always receives the ``m``-th word, so a forest's trees do not
    depend on how many trees were requested or in which order they are grown.
    """
    ss = np.random.SeedSequence(int(master), spawn_key=(int(stream),))
    return ss.generate_state(count, dtype=np.uint32)


def score_split(data: Dataset, targets, rect, j: int, u: float) -> float:
    """Split score ``P[t 1_A0]^2 / P(A0) + P[t 1_A1]^2 / P(A1)`` of a cell.

    Only points in ``rect`` enter the sums; masses are relative to the whole
    sample, and an empty child contributes 0.
    """
    from .geometry import contains_many

    t = np.asarray(targets, dtype=float)
    inside = contains_many(rect.lower[None, :], rect.upper[None, :], data.X)[:, 0]
    idx = np.flatnonzero(inside).astype(np.int64)
    a, b = rect.lower[j], rect.upper[j]
    thr = a + u * (b - a)
    d, _, _ = _native.split_score(data.X, t, idx, 0, idx.shape[0], j, thr, float(data.n))
    return float(d)


def softmax_select(scores, beta: float, rng) -> int:
    """Draw an index with probability proportional to ``exp(beta * score)``."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.shape[0] < 1:
        raise ValueError("need at least one score")
    if scores.shape[0] == 1:
        return 0
    w = np.exp(beta * (scores - scores.max()))
    w /= w.sum()
    rng = np.random.default_rng(rng)
    return int(rng.choice(scores.shape[0], p=w))


def _capacity(cfg: GrowConfig, n: int) -> int:
    full = None
    if cfg.max_depth is not None and cfg.max_depth <= MAX_FULL_DEPTH:
        full = 2 ** (cfg.max_depth + 1) - 1
    if cfg.unbounded:
        return full
    data_bound = 2 * n - 1 if n > 0 else 1
    return data_bound if full is None else min(full, data_bound)


def grow_nodes(X: np.ndarray, targets: np.ndarray, cfg: GrowConfig, seed: int):
    """Run the compiled grower; returns the node table and leaf corners."""
    n, p = X.shape
    if n < 1:
        raise ValueError("empty dataset")
    max_depth = -1 if cfg.max_depth is None else cfg.max_depth
    out = _native.grow_tree(
        X, np.ascontiguousarray(targets, dtype=float),
        _STRATEGY_CODES[cfg.strategy], max_depth, cfg.n_candidates, float(cfg.beta),
        cfg.features_for(p), cfg.min_samples_leaf, float(cfg.min_impurity_decrease),
        bool(cfg.bootstrap), bool(cfg.filter_candidates),
        _SUPPORT_CODES[cfg.threshold_support], bool(cfg.stop_on_pure),
        _capacity(cfg, n), np.uint32(seed),
    )
    feature, threshold, frac, left, right, gain, depth, lower, upper = out
    is_leaf = feature < 0
    leaf = np.full(feature.shape[0], -1, dtype=np.int64)
    leaf[is_leaf] = np.arange(int(is_leaf.sum()))
    nodes = NodeTable(feature, threshold, frac, left, right, gain, depth, leaf)
    return nodes, lower[is_leaf], upper[is_leaf]


def _scheme_from_nodes(nodes: NodeTable) -> SplitScheme:
    words = nodes.words()
    entries = {words[v]: (int(nodes.feature[v]), float(nodes.frac[v])) for v in nodes.internal}
    return SplitScheme(entries, int(nodes.depth.max()) if nodes.n_nodes else 0)


def grow_partition(data: Dataset, targets, cfg: GrowConfig, rng=None) -> tuple[Partition, SplitScheme]:
    """Grow a random partition of ``[0, 1]^p`` from ``(data.X, targets)``.

    ``rng`` may be an int seed or a ``numpy.random.Generator``; ``None`` uses
    ``cfg.seed``.
    """
    if data.n < 1:
        raise ValueError("empty dataset")
    seed = derive_seed(cfg.seed if rng is None else rng)
    t = data.y if targets is None else np.asarray(targets, dtype=float)
    nodes, lower, upper = grow_nodes(data.X, t, cfg, seed)
    partition = Partition(lower, upper, int(nodes.depth.max()), nodes=nodes)
    return partition, _scheme_from_nodes(nodes)


def histogram_fit(partition: Partition, data: Dataset, targets=None, scheme: SplitScheme | None = None) -> FittedTree:
    """Leaf means of ``targets`` over ``partition`` with the ``0/0 = 0`` rule."""
    t = data.y if targets is None else np.asarray(targets, dtype=float)
    if t.shape[0] != data.n:
        raise ValueError("targets length does not match the data")
    L = len(partition)
    ids = partition.locate_many(data.X)
    counts = np.bincount(ids, minlength=L)
    sums = np.bincount(ids, weights=t, minlength=L)
    values = np.divide(sums, counts, out=np.zeros(L), where=counts > 0)
    return FittedTree(partition, scheme, values, counts.astype(np.int64), data.n, ids.astype(np.int64))


def grow_tree(data: Dataset, targets, cfg: GrowConfig, seed: int) -> FittedTree:
    """Grow a partition with an explicit 32-bit seed and fit it on the full data."""
    t = data.y if targets is None else np.asarray(targets, dtype=float)
    nodes, lower, upper = grow_nodes(data.X, t, cfg, seed)
    partition = Partition(lower, upper, int(nodes.depth.max()), nodes=nodes)
    return histogram_fit(partition, data, t, scheme=None)


def pseudo_residuals(loss, F_values, y) -> np.ndarray:
    """Negative first derivative of ``loss`` in its first argument."""
    return -loss.first_derivative(np.asarray(F_values, dtype=float), np.asarray(y, dtype=float))


def scheme_of(tree: FittedTree) -> SplitScheme:
    """Split scheme of a tree, rebuilt from its node table if not cached."""
    if tree.scheme is not None:
        return tree.scheme
    if tree.partition.nodes is None:
        raise ValueError("tree has no split record")
    return _scheme_from_nodes(tree.partition.nodes)


__all__ = [
    "Dataset", "GrowConfig", "SplitScheme", "FittedTree", "score_split", "softmax_select",
    "grow_partition", "histogram_fit", "grow_tree", "pseudo_residuals", "tree_seeds",
    "derive_seed", "scheme_of",
]
