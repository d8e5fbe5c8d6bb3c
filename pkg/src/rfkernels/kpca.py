"""Kernel PCA on precomputed Gram matrices, plus silhouette and linear probes."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.spatial.distance import cdist

from .forest import GramBundle


@dataclass(frozen=True, eq=False)
class KpcaModel:
    """Fitted kernel PCA.

    Attributes:
        eigenvalues: top eigenvalues of the double-centred train Gram.
        eigenvectors: matching unit eigenvectors (columns), sign-normalized.
        column_means: train Gram column means, used to centre cross blocks.
        grand_mean: mean of the whole train Gram.
        train_scores: projection of the training points.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    column_means: np.ndarray
    grand_mean: float
    train_scores: np.ndarray
    kernel_tag: str = ""
    train_points: np.ndarray | None = None

    @property
    def q(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class EvalReport:
    silhouette: float | None
    probe_metric: float
    relative_improvement: float | None = None


def _as_matrix(gram) -> tuple[np.ndarray, str, np.ndarray | None]:
    if isinstance(gram, GramBundle):
        return gram.matrix, gram.kernel_tag, gram.points
    return np.asarray(gram, dtype=float), "", None


def kpca_fit(gram_train, q: int = 2, tol: float = 1e-10) -> KpcaModel:
    """Fit kernel PCA with ``q`` components on a train-by-train Gram.

    Components whose eigenvalue is not positive (relative to the largest) are
    dropped with a warning.
    """
    K, tag, pts = _as_matrix(gram_train)
    s = K.shape[0]
    if K.shape != (s, s):
        raise ValueError("train Gram must be square")
    if q < 1:
        raise ValueError("q must be >= 1")
    K = 0.5 * (K + K.T)
    col = K.mean(axis=0)
    grand = float(col.mean())
    Kc = K - col[None, :] - col[:, None] + grand
    vals, vecs = np.linalg.eigh(0.5 * (Kc + Kc.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    cutoff = tol * max(vals[0], 0.0)
    n_pos = int(np.sum(vals > max(cutoff, 0.0))) if vals[0] > 0 else 0
    if q > n_pos:
        warnings.warn(f"only {n_pos} positive components; truncating q={q}", RuntimeWarning, stacklevel=2)
        q = n_pos
    vals, vecs = vals[:q], vecs[:, :q].copy()
    for i in range(q):
        if vecs[np.argmax(np.abs(vecs[:, i])), i] < 0:
            vecs[:, i] = -vecs[:, i]
    scores = vecs * np.sqrt(vals)[None, :]
    return KpcaModel(vals, vecs, col, grand, scores, tag, pts)


def kpca_project(model: KpcaModel, gram_cross) -> np.ndarray:
    """Scores of new points from their kernel block against the train points."""
    Kx = np.atleast_2d(np.asarray(gram_cross, dtype=float))
    if Kx.shape[1] != model.column_means.shape[0]:
        raise ValueError(
            f"cross block has {Kx.shape[1]} columns, model was fitted on {model.column_means.shape[0]} points")
    if model.q == 0:
        return np.zeros((Kx.shape[0], 0))
    Kc = Kx - model.column_means[None, :] - Kx.mean(axis=1, keepdims=True) + model.grand_mean
    return Kc @ model.eigenvectors / np.sqrt(model.eigenvalues)[None, :]


def linear_gram(A, B=None) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    return A @ B.T


def rbf_gram(A, B=None, gamma: float | None = None) -> np.ndarray:
    """``exp(-gamma ||a - b||^2)``; ``gamma`` defaults to ``1 / p``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    g = 1.0 / A.shape[1] if gamma is None else gamma
    return np.exp(-g * cdist(A, B, "sqeuclidean"))


def silhouette(scores, labels) -> float:
    """Mean silhouette width in Euclidean score space.

    Points in singleton clusters, and points whose ``a`` and ``b`` are both
    zero, contribute 0.
    """
    S = np.atleast_2d(np.asarray(scores, dtype=float))
    if S.shape[0] == 1 and np.ndim(scores) == 1:
        S = S.T
    labels = np.asarray(labels)
    classes, inv = np.unique(labels, return_inverse=True)
    if classes.shape[0] < 2:
        raise ValueError("silhouette needs at least two clusters")
    D = cdist(S, S)
    counts = np.bincount(inv)
    sums = np.zeros((S.shape[0], classes.shape[0]))
    for c in range(classes.shape[0]):
        sums[:, c] = D[:, inv == c].sum(axis=1)
    own = counts[inv]
    a = np.divide(sums[np.arange(S.shape[0]), inv], own - 1,
                  out=np.zeros(S.shape[0]), where=own > 1)
    means = sums / counts[None, :]
    means[np.arange(S.shape[0]), inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    width = np.divide(b - a, denom, out=np.zeros(S.shape[0]), where=denom > 0)
    width[own == 1] = 0.0
    return float(width.mean())


def _standardize(train: np.ndarray, test: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    keep = sd > 1e-12
    return (train[:, keep] - mu[keep]) / sd[keep], (test[:, keep] - mu[keep]) / sd[keep]


def _logistic_gd(Xtr, labels, n_iter=500, step=0.1, l2=1e-4):
    """Multinomial logistic regression by full-batch gradient descent."""
    classes, yi = np.unique(labels, return_inverse=True)
    n, q = Xtr.shape
    Y = np.eye(classes.shape[0])[yi]
    Wt = np.zeros((q, classes.shape[0]))
    b = np.zeros(classes.shape[0])
    for _ in range(n_iter):
        Z = Xtr @ Wt + b
        Z -= Z.max(axis=1, keepdims=True)
        P = np.exp(Z)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - Y) / n
        Wt -= step * (Xtr.T @ G + l2 * Wt)
        b -= step * G.sum(axis=0)
    return classes, Wt, b


def linear_probe(train_scores, train_targets, test_scores, test_targets,
                 task: Literal["classify", "regress"], baseline_mse: float | None = None,
                 test_silhouette: bool = False) -> EvalReport:
    """Fit a linear model on train scores and evaluate it on test scores.

    ``classify`` reports test accuracy of a logistic regression; ``regress``
    reports test MSE of least squares with intercept and, when
    ``baseline_mse`` is given, the relative improvement in percent.
    """
    Xtr = np.atleast_2d(np.asarray(train_scores, dtype=float))
    Xte = np.atleast_2d(np.asarray(test_scores, dtype=float))
    ytr = np.asarray(train_targets)
    yte = np.asarray(test_targets)
    Xtr, Xte = _standardize(Xtr, Xte)
    sil = silhouette(np.asarray(test_scores, dtype=float), yte) if test_silhouette else None
    if task == "classify":
        classes, Wt, b = _logistic_gd(Xtr, ytr)
        pred = classes[np.argmax(Xte @ Wt + b, axis=1)]
        return EvalReport(sil, float(np.mean(pred == yte)))
    if task != "regress":
        raise ValueError(f"unknown task {task!r}")
    ytr = ytr.astype(float)
    A = np.column_stack([np.ones(Xtr.shape[0]), Xtr])
    coef, *_ = np.linalg.lstsq(A, ytr, rcond=None)
    pred = np.column_stack([np.ones(Xte.shape[0]), Xte]) @ coef
    mse = float(np.mean((pred - yte.astype(float)) ** 2))
    ri = None if baseline_mse is None else relative_improvement(mse, baseline_mse)
    return EvalReport(sil, mse, ri)


def relative_improvement(mse: float, baseline_mse: float) -> float:
    return 100.0 * (mse - baseline_mse) / baseline_mse
