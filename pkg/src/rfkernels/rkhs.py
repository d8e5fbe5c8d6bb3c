"""Hilbert-space analytics of the forest kernel, computed through Gram matrices.

Elements are restricted to finite combinations ``F = sum_j c_j k(z_j, .)``;
the infinite forest itself is the element anchored at the training points
with ``c = y / n``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .forest import Forest, cross_gram, gram, truncate, weight_matrix


@dataclass(frozen=True, eq=False)
class RkhsElement:
    """``F = sum_j c_j k(anchor_j, .)`` for the ``kP`` kernel of a forest."""

    coefficients: np.ndarray
    anchor_points: np.ndarray
    forest_fingerprint: str | None = None

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).reshape(-1)
        A = np.atleast_2d(np.asarray(self.anchor_points, dtype=float))
        if A.shape[0] != c.shape[0]:
            raise ValueError("one coefficient per anchor point is required")
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "anchor_points", A)


def training_element(forest: Forest, coefficients) -> RkhsElement:
    """Element anchored at the training points of ``forest``."""
    return RkhsElement(coefficients, forest.data.X, forest.fingerprint)


def infinite_forest_element(forest: Forest, targets=None) -> RkhsElement:
    """The forest predictor as an RKHS element: coefficients ``y / n``."""
    y = forest.targets if targets is None else np.asarray(targets, dtype=float)
    return training_element(forest, y / forest.n)


def _train_gram(forest: Forest) -> np.ndarray:
    return gram(forest, None, "kP").matrix


def _anchored_at_training(elem: RkhsElement, forest: Forest) -> None:
    if elem.anchor_points.shape != forest.data.X.shape or not np.array_equal(
            elem.anchor_points, forest.data.X):
        raise ValueError("element must be anchored at the forest's training points")


def evaluate(elem: RkhsElement, forest: Forest, Z) -> np.ndarray:
    """Values ``F(z)`` at the rows of ``Z``."""
    return cross_gram(forest, Z, elem.anchor_points, "kP") @ elem.coefficients


def inner(forest: Forest, a: RkhsElement, b: RkhsElement) -> float:
    """``<F_a, F_b>_H = a^T K(anchors_a, anchors_b) b``."""
    K = cross_gram(forest, a.anchor_points, b.anchor_points, "kP")
    return float(a.coefficients @ K @ b.coefficients)


def norm_sq(forest: Forest, elem: RkhsElement) -> float:
    return inner(forest, elem, elem)


def forest_rkhs_norm_sq(forest: Forest, data=None, targets=None) -> float:
    """Squared RKHS norm of the forest predictor, ``y^T K y / n^2``."""
    y = forest.targets if targets is None else np.asarray(targets, dtype=float)
    K = _train_gram(forest)
    return float(y @ K @ y) / forest.n ** 2


class VarianceDecomposition(NamedTuple):
    lhs: float
    norm_part: float
    residual_part: float
    gap: float


def variance_decomposition_check(forest: Forest, data=None, targets=None) -> VarianceDecomposition:
    """Split ``P_n[y^2]`` into the squared norm and the mean per-tree residual.

    Every tree's histogram fit is an orthogonal projection of ``y``, so the
    gap vanishes up to rounding.
    """
    y = forest.targets if targets is None else np.asarray(targets, dtype=float)
    f = forest if targets is None or np.array_equal(y, forest.targets) else forest.refit(y)
    lhs = float(np.mean(y ** 2))
    norm_part = forest_rkhs_norm_sq(f)
    per_tree = f.tree_predictions(f.data.X)
    residual_part = float(np.mean((y[:, None] - per_tree) ** 2))
    return VarianceDecomposition(lhs, norm_part, residual_part, lhs - norm_part - residual_part)


def penalized_objective(elem: RkhsElement, forest: Forest, data=None, targets=None) -> float:
    """``-2 P_n[y F(x)] + ||F||_H^2`` for an element anchored at training points."""
    _anchored_at_training(elem, forest)
    y = forest.targets if targets is None else np.asarray(targets, dtype=float)
    K = _train_gram(forest)
    c = elem.coefficients
    Fx = K @ c
    return float(-2.0 * np.mean(y * Fx) + c @ Fx)


def kme_mmd(forest: Forest, sample_q1, sample_q2, kernel_tag: str = "k0") -> float:
    """Squared maximum mean discrepancy between two samples.

    The ``kP`` version is available but weighs rare leaves heavily, so it
    warns; ``k0`` is bounded and is the default.
    """
    if kernel_tag == "kP":
        warnings.warn("kP-based MMD amplifies the contribution of low-mass leaves",
                      RuntimeWarning, stacklevel=2)
    A = np.atleast_2d(np.asarray(sample_q1, dtype=float))
    B = np.atleast_2d(np.asarray(sample_q2, dtype=float))
    kaa = cross_gram(forest, A, A, kernel_tag).mean()
    kbb = cross_gram(forest, B, B, kernel_tag).mean()
    kab = cross_gram(forest, A, B, kernel_tag).mean()
    return max(float(kaa + kbb - 2.0 * kab), 0.0)


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    """Eigenpairs of the empirical kernel operator, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    trace: float

    def to_dict(self, top: int | None = None) -> dict:
        ev = self.eigenvalues if top is None else self.eigenvalues[:top]
        return {"eigenvalues": [float(v) for v in ev], "trace": self.trace}


def kernel_operator_spectrum(forest: Forest, data=None) -> SpectrumReport:
    """Eigendecomposition of ``K / n`` at the training points."""
    K = _train_gram(forest) / forest.n
    K = 0.5 * (K + K.T)
    vals, vecs = np.linalg.eigh(K)
    order = np.argsort(vals)[::-1]
    return SpectrumReport(vals[order], vecs[:, order], float(np.trace(K)))


def neff_from_weights(W) -> tuple[np.ndarray, float]:
    """Per-row and global effective sample sizes of a weight matrix."""
    W = np.asarray(W, dtype=float)
    row = (W ** 2).sum(axis=1)
    per_point = np.divide(1.0, row, out=np.full(row.shape, np.inf), where=row > 0)
    return per_point, float(W.shape[0] / (W ** 2).sum())


def effective_sample_size(forest: Forest, data=None) -> tuple[np.ndarray, float]:
    """``N_eff,i = 1 / sum_j W_ij^2`` and ``N_eff = n / ||W||_F^2`` at training points."""
    return neff_from_weights(weight_matrix(forest, forest.data.X))


def refinement_gap_matrix(forest_deep: Forest, truncation_depth: int) -> np.ndarray:
    """``K_fine - K_coarse`` where the coarse forest cuts every tree at the given depth."""
    coarse = truncate(forest_deep, truncation_depth)
    return _train_gram(forest_deep) - _train_gram(coarse)


def refinement_gap(forest_deep: Forest, truncation_depth: int) -> float:
    """Smallest eigenvalue of :func:`refinement_gap_matrix`."""
    D = refinement_gap_matrix(forest_deep, truncation_depth)
    return float(np.linalg.eigvalsh(0.5 * (D + D.T)).min())


def report_json(path, *, spectrum: SpectrumReport | None = None, gap: float | None = None,
                n_eff: float | None = None, seeds=None, top: int | None = 20) -> dict:
    """Write a JSON record of the analytics and return it."""
    rec: dict = {}
    if spectrum is not None:
        rec.update(spectrum.to_dict(top))
    if gap is not None:
        rec["gap"] = float(gap)
    if n_eff is not None:
        rec["n_eff"] = float(n_eff)
    rec["seeds"] = seeds
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rec, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return rec
