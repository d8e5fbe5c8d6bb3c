"""Finite forests: predictor, weights and the two Random Forest kernels.

The partition distribution is represented by the ``M`` sampled trees and the
block intensity by the multiset of their leaves, so every integral over
leaves becomes ``(1/M) * sum over trees * sum over leaves``.

Kernel tags: ``"k0"`` is the connection function (probability that two
points share a leaf) and ``"kP"`` weighs each shared leaf ``A`` by
``alpha^2(A) = 1 / P_n(A)`` (or 1 for an empty leaf).
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp

from . import _native
from .geometry import NodeTable, Partition
from .trees import Dataset, FittedTree, GrowConfig, grow_tree, histogram_fit, tree_seeds

KernelTag = Literal["k0", "kP"]

MAGIC = b"RFKF"
FORMAT_VERSION = 1


def _check_tag(tag: str) -> None:
    if tag not in ("k0", "kP"):
        raise ValueError(f"kernel tag must be 'k0' or 'kP', got {tag!r}")


@dataclass(frozen=True, eq=False)
class Forest:
    """``M`` fitted trees sharing one training set."""

    trees: tuple[FittedTree, ...]
    data: Dataset
    targets: np.ndarray
    cfg: GrowConfig | None = None
    seed: int | None = None

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("a forest needs at least one tree")
        object.__setattr__(self, "trees", tuple(self.trees))
        t = np.asarray(self.targets, dtype=float)
        if t.shape != (self.data.n,):
            raise ValueError("targets length does not match the data")
        t.flags.writeable = False
        object.__setattr__(self, "targets", t)

    @property
    def M(self) -> int:
        return len(self.trees)

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def p(self) -> int:
        return self.data.p

    @property
    def data_fingerprint(self) -> str:
        return self.data.fingerprint

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha256(self.data_fingerprint.encode())
        h.update(json.dumps(self.cfg.to_dict() if self.cfg else None, sort_keys=True).encode())
        h.update(repr((self.seed, self.M)).encode())
        h.update(self.leaf_value.tobytes())
        return h.hexdigest()

    @cached_property
    def leaf_offset(self) -> np.ndarray:
        sizes = np.array([t.n_leaves for t in self.trees], dtype=np.int64)
        return np.concatenate([[0], np.cumsum(sizes)])

    @property
    def n_leaves(self) -> np.ndarray:
        return np.diff(self.leaf_offset)

    @cached_property
    def leaf_count(self) -> np.ndarray:
        return np.concatenate([t.leaf_count for t in self.trees])

    @cached_property
    def leaf_value(self) -> np.ndarray:
        return np.concatenate([t.leaf_value for t in self.trees])

    @cached_property
    def _packed(self):
        if any(t.partition.nodes is None for t in self.trees):
            return None
        tables = [t.partition.nodes for t in self.trees]
        sizes = np.array([nd.n_nodes for nd in tables], dtype=np.int64)
        node_offset = np.concatenate([[0], np.cumsum(sizes)])
        leaf = np.concatenate([
            np.where(nd.leaf >= 0, nd.leaf + off, -1)
            for nd, off in zip(tables, self.leaf_offset[:-1])
        ])
        cat = lambda name: np.ascontiguousarray(np.concatenate([getattr(nd, name) for nd in tables]))
        return dict(
            feature=cat("feature"), threshold=cat("threshold"), left=cat("left"),
            right=cat("right"), depth=cat("depth"), gain=cat("gain"), leaf=leaf,
            node_offset=node_offset,
        )

    def alpha2(self, tag: KernelTag) -> np.ndarray:
        """Leaf weights for the requested kernel, concatenated over trees."""
        _check_tag(tag)
        if tag == "k0":
            return np.ones(self.leaf_count.shape[0])
        c = self.leaf_count
        return np.where(c > 0, self.n / np.maximum(c, 1), 1.0)

    def leaf_ids(self, Z) -> np.ndarray:
        """Global leaf id of every point in every tree, shape ``(s, M)``."""
        Z = np.ascontiguousarray(np.atleast_2d(np.asarray(Z, dtype=float)))
        if Z.shape[1] != self.p:
            raise ValueError(f"points have {Z.shape[1]} coordinates, forest expects {self.p}")
        pk = self._packed
        if pk is not None:
            return _native.apply_packed(Z, pk["feature"], pk["threshold"], pk["left"],
                                        pk["right"], pk["node_offset"], pk["leaf"])
        cols = [t.apply(Z) + off for t, off in zip(self.trees, self.leaf_offset[:-1])]
        return np.stack(cols, axis=1)

    @cached_property
    def train_leaf_ids(self) -> np.ndarray:
        if all(t.train_ids is not None for t in self.trees):
            ids = np.empty((self.n, self.M), dtype=np.int64)
            for m, (t, off) in enumerate(zip(self.trees, self.leaf_offset[:-1])):
                ids[:, m] = t.train_ids + off
        else:
            ids = self.leaf_ids(self.data.X)
        ids.flags.writeable = False
        return ids

    def tree_predictions(self, Z) -> np.ndarray:
        """Per-tree predictions, shape ``(s, M)``."""
        return self.leaf_value[self.leaf_ids(Z)]

    def tree_predictions_train(self) -> np.ndarray:
        """Per-tree predictions at the training points, shape ``(n, M)``."""
        return self.leaf_value[self.train_leaf_ids]

    def apply_weights(self, v) -> np.ndarray:
        """``W v`` for values ``v`` given at the training points.

        Row ``i`` of the weight matrix averages over the training points
        sharing a leaf with ``X_i``, so this is the forest predictor refitted
        on ``v``. ``v`` may be a vector or an ``(n, q)`` matrix.
        """
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError("values must be given at the training points")
        V = np.ascontiguousarray(v.reshape(self.n, -1))
        out = _native.leaf_smooth(self._train_ids_by_tree, self.leaf_offset, self.leaf_count, V)
        return out.reshape(v.shape)

    @cached_property
    def _train_ids_by_tree(self) -> np.ndarray:
        return np.ascontiguousarray(self.train_leaf_ids.T)

    def leaf_means(self, v) -> np.ndarray:
        """Mean of ``v`` over the training points of every leaf (0 if empty)."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError("values must be given at the training points")
        c = self.leaf_count
        sums = self.train_indicator.T @ v
        if v.ndim == 1:
            return np.divide(sums, c, out=np.zeros(c.shape[0]), where=c > 0)
        return np.divide(sums, c[:, None], out=np.zeros(sums.shape), where=c[:, None] > 0)

    @cached_property
    def train_indicator(self) -> sp.csr_matrix:
        """Sparse ``(n, total leaves)`` membership matrix of the training points."""
        return _indicator(self.train_leaf_ids, self.leaf_count.shape[0])

    def refit(self, targets) -> "Forest":
        """Same partitions, leaf values recomputed from new targets."""
        trees = tuple(
            histogram_fit(t.partition, self.data, targets, scheme=t.scheme) for t in self.trees
        )
        return Forest(trees, self.data, targets, self.cfg, self.seed)


def fit_forest(data: Dataset, targets, cfg: GrowConfig, M: int, seed: int | None = None,
               threads: int = 1) -> Forest:
    """Grow ``M`` independent trees and fit each on the full data.

    Tree ``m`` uses a seed derived from ``(seed, m)`` only, so the result does
    not depend on ``threads``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    t = data.y if targets is None else np.asarray(targets, dtype=float)
    master = cfg.seed if seed is None else seed
    seeds = tree_seeds(master, M)
    if threads > 1 and M > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(lambda s: grow_tree(data, t, cfg, s), seeds))
    else:
        trees = [grow_tree(data, t, cfg, s) for s in seeds]
    return Forest(tuple(trees), data, t, cfg, master)


def predict(forest: Forest, z) -> np.ndarray | float:
    """Average of the tree predictions; scalar for a single point."""
    z = np.asarray(z, dtype=float)
    out = forest.tree_predictions(np.atleast_2d(z)).mean(axis=1)
    return float(out[0]) if z.ndim == 1 else out


def weight_matrix(forest: Forest, Z) -> np.ndarray:
    """Rows ``W_n.(z)``: the weight each training point receives at ``z``.

    Computed tree by tree from leaf membership; kept independent of the Gram
    builder so the two can be checked against each other.
    """
    Zi = forest.leaf_ids(Z)
    Ti = forest.train_leaf_ids
    W = np.zeros((Zi.shape[0], forest.n))
    for m in range(forest.M):
        same = Zi[:, m][:, None] == Ti[:, m][None, :]
        cnt = forest.leaf_count[Ti[:, m]]
        W += same / cnt[None, :]
    return W / forest.M


def weight_vector(forest: Forest, z) -> np.ndarray:
    """Weights ``W_ni(z)``, ``i = 1..n``, at a single point."""
    return weight_matrix(forest, np.asarray(z, dtype=float)[None, :])[0]


def _indicator(ids: np.ndarray, n_cols: int) -> sp.csr_matrix:
    s, M = ids.shape
    indptr = np.arange(0, s * M + 1, M, dtype=np.int64)
    return sp.csr_matrix((np.ones(s * M), np.ascontiguousarray(ids).ravel(), indptr), shape=(s, n_cols))


def cross_gram(forest: Forest, A, B, kernel_tag: KernelTag = "kP") -> np.ndarray:
    """Kernel block ``k(a_i, b_j)`` between two point sets.

    Points are bucketed by leaf in every tree and each leaf adds its weight
    to the pairs it contains, which is a sparse product ``Z_A D Z_B^T / M``.
    """
    _check_tag(kernel_tag)
    L = forest.leaf_count.shape[0]
    ZA = _indicator(forest.leaf_ids(A), L)
    ZB = _indicator(forest.leaf_ids(B), L)
    D = sp.diags(forest.alpha2(kernel_tag))
    return np.asarray((ZA @ D @ ZB.T).toarray()) / forest.M


@dataclass(frozen=True, eq=False)
class GramBundle:
    """Symmetric kernel matrix over a set of evaluation points."""

    matrix: np.ndarray
    kernel_tag: str
    points: np.ndarray
    forest_fingerprint: str | None = None
    seed: int | None = None
    M: int | None = None

    @property
    def s(self) -> int:
        return self.matrix.shape[0]

    def to_csv(self, path) -> None:
        """Write the matrix with a ``# kernel=... seed=... M=...`` header line."""
        write_gram_csv(self, path)


def gram(forest: Forest, points=None, kernel_tag: KernelTag = "kP") -> GramBundle:
    """Gram matrix of ``k0`` or ``kP`` at ``points`` (training points by default)."""
    P = forest.data.X if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(P < 0.0) or np.any(P > 1.0):
        raise ValueError("points must lie in [0, 1]^p")
    K = cross_gram(forest, P, P, kernel_tag)
    K = 0.5 * (K + K.T)
    if kernel_tag == "k0":
        np.fill_diagonal(K, 1.0)
    return GramBundle(K, kernel_tag, P, forest.fingerprint, forest.seed, forest.M)


def gram_row_means(bundle: GramBundle) -> np.ndarray:
    """``(1/n) sum_j k(X_i, X_j)`` for a kP Gram at the training points."""
    if bundle.kernel_tag != "kP":
        raise ValueError("row means are defined for the kP kernel")
    return bundle.matrix.mean(axis=1)


def tree_pair_values(forest: Forest, z, z2, kernel_tag: KernelTag = "kP") -> np.ndarray:
    """Per-tree summands ``alpha^2(A) 1{z, z2 in A}``; their mean is ``k(z, z2)``."""
    ids = forest.leaf_ids(np.vstack([np.asarray(z, float), np.asarray(z2, float)]))
    same = ids[0] == ids[1]
    return np.where(same, forest.alpha2(kernel_tag)[ids[0]], 0.0)


def write_gram_csv(bundle: GramBundle, path) -> None:
    path = Path(path)
    s = bundle.s
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# kernel={bundle.kernel_tag} seed={bundle.seed} M={bundle.M}\n")
        fh.write(",".join(f"p{j}" for j in range(s)) + "\n")
        for row in bundle.matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_gram_csv(path) -> tuple[dict, np.ndarray]:
    """Inverse of :func:`write_gram_csv`; returns (header fields, matrix)."""
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline().lstrip("#").split()
        meta = dict(item.split("=", 1) for item in first)
        fh.readline()
        K = np.loadtxt(fh, delimiter=",", ndmin=2)
    return meta, K


# -- binary serialization ---------------------------------------------------

def save_forest(forest: Forest, path) -> None:
    """Versioned binary dump: header, then per-tree split record and leaf table."""
    if forest._packed is None:
        raise ValueError("only forests grown from split records can be saved")
    cfg = json.dumps(forest.cfg.to_dict() if forest.cfg else None, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HIQ", FORMAT_VERSION, forest.p, forest.n))
    buf.write(bytes.fromhex(forest.data_fingerprint))
    buf.write(struct.pack("<Iq", forest.M, -1 if forest.seed is None else int(forest.seed)))
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    for tree in forest.trees:
        nd = tree.partition.nodes
        buf.write(struct.pack("<II", nd.n_nodes, tree.n_leaves))
        for arr, dt in ((nd.feature, "<i8"), (nd.threshold, "<f8"), (nd.frac, "<f8"),
                        (nd.left, "<i8"), (nd.right, "<i8"), (nd.gain, "<f8"), (nd.depth, "<i8")):
            buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
        part = tree.partition
        for arr, dt in ((part.lower, "<f8"), (part.upper, "<f8"),
                        (tree.leaf_value, "<f8"), (tree.leaf_count, "<i8")):
            buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_forest(path, data: Dataset, targets=None) -> Forest:
    """Read a forest written by :func:`save_forest` for the given training data."""
    raw = memoryview(Path(path).read_bytes())
    pos = 0

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(raw):
            raise ValueError("truncated forest file")
        chunk = raw[pos:pos + nbytes]
        pos += nbytes
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ValueError("not a forest file")
    version, p, n = struct.unpack("<HIQ", take(14))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {version}")
    fp = bytes(take(32)).hex()
    if (p, n) != (data.p, data.n) or fp != data.fingerprint:
        raise ValueError("forest file was built on different data")
    M, seed = struct.unpack("<Iq", take(12))
    (clen,) = struct.unpack("<I", take(4))
    cfg_dict = json.loads(bytes(take(clen)))
    cfg = GrowConfig(**cfg_dict) if cfg_dict else None
    trees = []
    for _ in range(M):
        n_nodes, L = struct.unpack("<II", take(8))
        arrays = [np.frombuffer(take(8 * n_nodes), dtype=dt).copy()
                  for dt in ("<i8", "<f8", "<f8", "<i8", "<i8", "<f8", "<i8")]
        feature, threshold, frac, left, right, gain, depth = arrays
        leaf = np.full(n_nodes, -1, dtype=np.int64)
        leaf[feature < 0] = np.arange(L)
        nodes = NodeTable(feature, threshold, frac, left, right, gain, depth, leaf)
        lower = np.frombuffer(take(8 * L * p), dtype="<f8").reshape(L, p)
        upper = np.frombuffer(take(8 * L * p), dtype="<f8").reshape(L, p)
        values = np.frombuffer(take(8 * L), dtype="<f8").copy()
        counts = np.frombuffer(take(8 * L), dtype="<i8").copy()
        part = Partition(lower, upper, int(depth.max()), nodes=nodes)
        trees.append(FittedTree(part, None, values, counts, n))
    t = data.y if targets is None else targets
    return Forest(tuple(trees), data, t, cfg, None if seed < 0 else seed)


def forest_from_partitions(partitions: Sequence[Partition], data: Dataset, targets=None) -> Forest:
    """Forest over hand-made partitions (fitted by histogram on ``data``)."""
    t = data.y if targets is None else np.asarray(targets, dtype=float)
    trees = tuple(histogram_fit(P, data, t) for P in partitions)
    return Forest(trees, data, t)


def truncate(forest: Forest, depth: int) -> Forest:
    """Coarsen every tree by cutting it at ``depth``; leaves are refitted.

    Each truncated tree is refined by its original, which is the coupling
    needed to compare the two kernels.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    trees = []
    for tree in forest.trees:
        nd = tree.partition.nodes
        if nd is None:
            raise ValueError("truncation needs split records")
        keep = np.zeros(nd.n_nodes, dtype=bool)
        keep[0] = True
        for v in range(nd.n_nodes):
            if keep[v] and nd.feature[v] >= 0 and nd.depth[v] < depth:
                keep[nd.left[v]] = True
                keep[nd.right[v]] = True
        old = np.flatnonzero(keep)
        remap = np.full(nd.n_nodes, -1, dtype=np.int64)
        remap[old] = np.arange(old.shape[0])
        is_leaf = (nd.feature[old] < 0) | (nd.depth[old] >= depth)
        feature = np.where(is_leaf, -1, nd.feature[old])
        left = np.where(is_leaf, -1, remap[np.maximum(nd.left[old], 0)])
        right = np.where(is_leaf, -1, remap[np.maximum(nd.right[old], 0)])
        leaf = np.full(old.shape[0], -1, dtype=np.int64)
        leaf[is_leaf] = np.arange(int(is_leaf.sum()))
        nodes = NodeTable(feature, np.where(is_leaf, 0.0, nd.threshold[old]),
                          np.where(is_leaf, 0.0, nd.frac[old]), left, right,
                          np.where(is_leaf, 0.0, nd.gain[old]), nd.depth[old], leaf)
        lower, upper = _leaf_corners(nodes, forest.p)
        part = Partition(lower, upper, int(nodes.depth.max()), nodes=nodes)
        trees.append(histogram_fit(part, forest.data, forest.targets))
    return Forest(tuple(trees), forest.data, forest.targets, forest.cfg, forest.seed)


def _leaf_corners(nodes: NodeTable, p: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.zeros((nodes.n_nodes, p))
    hi = np.ones((nodes.n_nodes, p))
    for v in range(nodes.n_nodes):
        j = nodes.feature[v]
        if j >= 0:
            for c in (nodes.left[v], nodes.right[v]):
                lo[c] = lo[v]
                hi[c] = hi[v]
            hi[nodes.left[v], j] = nodes.threshold[v]
            lo[nodes.right[v], j] = nodes.threshold[v]
    mask = nodes.feature < 0
    return lo[mask], hi[mask]
