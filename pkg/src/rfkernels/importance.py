"""Variable importance: GVI, MDI and MDA, plus ranking metrics.

GVI measures how much of a centred feature column survives smoothing by the
forest weight operator, ``||W x_c||^2 / ||x_c||^2``. MDI sums node-mass
weighted impurity decreases per feature. MDA is permutation importance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.stats import spearmanr

from . import _native
from .forest import Forest, predict
from .scenarios import SCENARIO_IDS, Scenario, generate_scenario, minmax_scale

Method = Literal["GVI", "MDI", "MDA"]


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    method: str
    scores: np.ndarray
    elapsed_seconds: float


def gvi_scores(forest: Forest, X=None) -> np.ndarray:
    """GVI of every column of ``X`` (the training covariates by default).

    ``X`` must have one row per training point; its columns need not be the
    covariates the forest was grown on, which is how affine invariance is
    checked.
    """
    X = forest.data.X if X is None else np.asarray(X, dtype=float)
    if X.shape[0] != forest.n:
        raise ValueError("X must have one row per training point")
    if forest.n < 2:
        raise ValueError("GVI needs n >= 2")
    Xc = X - X.mean(axis=0)
    den = (Xc ** 2).sum(axis=0)
    WX = forest.apply_weights(Xc)
    num = (WX ** 2).sum(axis=0)
    # a column that is constant up to rounding carries no variance to preserve
    flat = den <= 1e-24 * np.maximum((X ** 2).sum(axis=0), 1e-300)
    out = np.divide(num, den, out=np.zeros_like(den), where=~flat & (den > 0))
    return np.minimum(out, 1.0)


def gvi(forest: Forest, data=None) -> ImportanceReport:
    t0 = time.perf_counter()
    X = None if data is None else getattr(data, "X", data)
    scores = gvi_scores(forest, X)
    return ImportanceReport("GVI", scores, time.perf_counter() - t0)


def mdi(forest: Forest) -> ImportanceReport:
    """Split gains summed per feature, averaged over trees and normalized."""
    t0 = time.perf_counter()
    total = np.zeros(forest.p)
    for tree in forest.trees:
        feat, gain = tree.split_gains()
        total += np.bincount(feat, weights=gain, minlength=forest.p)
    total /= forest.M
    s = total.sum()
    scores = total / s if s > 0 else np.zeros(forest.p)
    return ImportanceReport("MDI", scores, time.perf_counter() - t0)


def mda(forest: Forest, data=None, targets=None, n_permutations: int = 5, rng=None,
        held_out: tuple[np.ndarray, np.ndarray] | None = None) -> ImportanceReport:
    """Permutation importance: mean rise in MSE when one column is shuffled.

    Evaluated on the training data unless ``held_out = (X, y)`` is given.
    """
    t0 = time.perf_counter()
    if held_out is None:
        X = forest.data.X if data is None else getattr(data, "X", data)
        y = forest.targets if targets is None else np.asarray(targets, dtype=float)
    else:
        X, y = (np.asarray(a, dtype=float) for a in held_out)
    rng = np.random.default_rng(rng)
    X = np.ascontiguousarray(X, dtype=float)
    permuted_predict = _permuted_predictor(forest, X)
    base = np.mean((predict(forest, X) - y) ** 2)
    scores = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        col = X[:, j]
        acc = 0.0
        for _ in range(n_permutations):
            pred = permuted_predict(j, col[rng.permutation(col.shape[0])])
            acc += np.mean((pred - y) ** 2) - base
        scores[j] = acc / n_permutations
    return ImportanceReport("MDA", scores, time.perf_counter() - t0)


def _permuted_predictor(forest: Forest, X: np.ndarray):
    """``f(j, column)``: forest predictions at ``X`` with column ``j`` replaced."""
    pk = forest._packed
    if pk is None or X.shape[1] > 64:
        def slow(j, column):
            Xp = X.copy()
            Xp[:, j] = column
            return predict(forest, Xp)
        return slow
    args = (pk["feature"], pk["threshold"], pk["left"], pk["right"], pk["node_offset"], pk["leaf"])
    ids, masks = _native.path_masks(X, *args)
    ids = np.ascontiguousarray(ids.T)
    masks = np.ascontiguousarray(masks.T)

    def fast(j, column):
        return _native.predict_replaced(X, j, np.ascontiguousarray(column), ids, masks, *args,
                                        forest.leaf_value)
    return fast


def precision_k(scores, signal_set) -> float:
    """Fraction of the top-``|S|`` features (ties by lower index) that are signals."""
    scores = np.asarray(scores, dtype=float)
    S = set(int(j) for j in signal_set)
    if not S:
        raise ValueError("signal set must be nonempty")
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return len(S.intersection(order[:len(S)].tolist())) / len(S)


def separation(scores, signal_set) -> float:
    """Mean signal score minus mean noise score."""
    scores = np.asarray(scores, dtype=float)
    mask = np.zeros(scores.shape[0], dtype=bool)
    mask[list(signal_set)] = True
    noise = scores[~mask].mean() if np.any(~mask) else 0.0
    return float(scores[mask].mean() - noise)


def spearman(a, b) -> float:
    """Rank correlation with average ranks; NaN when either vector is constant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return float("nan")
    return float(spearmanr(a, b).statistic)


def evaluate_importance(scores, signal_set, mda_scores) -> tuple[float, float, float]:
    """``(precision_k, separation, spearman vs MDA)`` for one importance vector."""
    return precision_k(scores, signal_set), separation(scores, signal_set), spearman(scores, mda_scores)


__all__ = [
    "ImportanceReport", "Scenario", "SCENARIO_IDS", "gvi", "gvi_scores", "mdi", "mda",
    "generate_scenario", "minmax_scale", "evaluate_importance", "precision_k", "separation",
    "spearman",
]
