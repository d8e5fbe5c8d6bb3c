"""Infinitesimal gradient boosting integrated with explicit Euler steps.

The flow ``dF/dt = T(F)`` is followed at the training points, where ``T(F)``
is the average of ``M`` softmax gradient trees fitted to the pseudo-residuals
of ``F``. Each tree prediction is an orthogonal projection of the residual
vector, so every Euler step is a descent direction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .forest import Forest, fit_forest
from .geometry import Hyperrectangle, contains_many, split
from .trees import Dataset, GrowConfig, SplitScheme, derive_seed, pseudo_residuals, tree_seeds


@dataclass(frozen=True)
class LossFn:
    """Convex, twice differentiable loss ``l(z, y)`` in its first argument."""

    identifier: str

    def __post_init__(self):
        if self.identifier not in ("squared", "logistic"):
            raise ValueError(f"unknown loss {self.identifier!r}")

    @property
    def curvature_bound(self) -> float:
        return 1.0 if self.identifier == "squared" else 0.25

    def value(self, z, y):
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.identifier == "squared":
            return 0.5 * (z - y) ** 2
        return np.logaddexp(0.0, -y * z)

    def first_derivative(self, z, y):
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.identifier == "squared":
            return z - y
        return -y * expit(-y * z)

    def second_derivative(self, z, y):
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.identifier == "squared":
            return np.ones(np.broadcast(z, y).shape)
        s = expit(y * z)
        return y * y * s * (1.0 - s)


SQUARED = LossFn("squared")
LOGISTIC = LossFn("logistic")


def get_loss(name: str | LossFn) -> LossFn:
    return name if isinstance(name, LossFn) else LossFn(name)


def signed_labels(y) -> np.ndarray:
    """Map ``{0, 1}`` labels to ``{-1, +1}``; ``+-1`` labels pass through."""
    y = np.asarray(y, dtype=float)
    vals = set(np.unique(y).tolist())
    if vals <= {-1.0, 1.0}:
        return y
    if vals <= {0.0, 1.0}:
        return 2.0 * y - 1.0
    raise ValueError("logistic loss needs labels in {-1, 1} or {0, 1}")


def _targets(loss: LossFn, data: Dataset, targets) -> np.ndarray:
    y = data.y if targets is None else np.asarray(targets, dtype=float)
    return signed_labels(y) if loss.identifier == "logistic" else y


def risk(loss: LossFn, F_values, data: Dataset | None = None, targets=None) -> float:
    """Empirical risk ``(1/n) sum l(F_i, y_i)``."""
    y = targets if data is None else _targets(loss, data, targets)
    F_values = np.asarray(F_values, dtype=float)
    y = np.asarray(y, dtype=float)
    if F_values.shape != y.shape:
        raise ValueError("F_values and targets differ in length")
    return float(np.mean(loss.value(F_values, y)))


def init_constant(loss: LossFn, targets, n_newton: int = 50, clip: float = 15.0) -> float:
    """Constant minimizing the empirical risk."""
    y = np.asarray(targets, dtype=float)
    if y.shape[0] < 1:
        raise ValueError("need at least one target")
    if loss.identifier == "squared":
        return float(y.mean())
    y = signed_labels(y)
    z = 0.0
    for _ in range(n_newton):
        g = float(np.mean(loss.first_derivative(z, y)))
        h = float(np.mean(loss.second_derivative(z, y)))
        if h <= 1e-300:
            z = clip if g < 0 else -clip
            break
        z = float(np.clip(z - g / h, -clip, clip))
    return z


def gradient_forest(loss: LossFn, F_values, data: Dataset, targets, cfg: GrowConfig, M: int,
                    rng=None) -> Forest:
    """``M`` softmax gradient trees grown and fitted on the pseudo-residuals."""
    if cfg.strategy != "softmax":
        raise ValueError("gradient forests use the softmax grower")
    y = _targets(loss, data, targets)
    r = pseudo_residuals(loss, F_values, y)
    return fit_forest(data, r, cfg, M, seed=derive_seed(rng))


def gradient_forest_step(loss: LossFn, F_values, data: Dataset, targets, cfg: GrowConfig,
                         M: int = 50, rng=None) -> np.ndarray:
    """Monte Carlo estimate of the infinite gradient forest at the training points."""
    forest = gradient_forest(loss, F_values, data, targets, cfg, M, rng)
    return forest.tree_predictions_train().mean(axis=1)


@dataclass(frozen=True, eq=False)
class FlowTrace:
    """Euler path of the boosting flow at the training points.

    ``slack[k]`` is the Monte Carlo tolerance declared for the risk change of
    step ``k``: ``2 * lam * mean_i |r_i| * sd_i / sqrt(M)`` with ``sd_i`` the
    spread of the tree predictions at point ``i``.
    """

    times: np.ndarray
    F_values: np.ndarray
    risks: np.ndarray
    lam: float
    M_per_step: int
    step_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slack: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mode: str = "fresh"

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    def descent_violations(self) -> np.ndarray:
        """Steps where the risk rose by more than the declared slack."""
        rise = np.diff(self.risks)
        tol = self.slack + 1e-12 * np.maximum(np.abs(self.risks[:-1]), 1.0)
        return np.flatnonzero(rise > tol)

    def to_csv(self, path) -> None:
        """Per-step record ``t,risk,step_norm,F_min,F_max``."""
        norms = np.concatenate([[0.0], self.step_norms])
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,risk,step_norm,F_min,F_max\n")
            for k in range(self.times.shape[0]):
                Fk = self.F_values[k]
                fh.write(f"{float(self.times[k])!r},{float(self.risks[k])!r},{float(norms[k])!r},"
                         f"{float(Fk.min())!r},{float(Fk.max())!r}\n")


def n_euler_steps(T_end: float, lam: float) -> int:
    return int(math.ceil(T_end / lam - 1e-9)) if T_end > 0 else 0


def igb_flow(loss: LossFn, data: Dataset, targets, cfg: GrowConfig, lam: float = 0.01,
             T_end: float = 1.0, M_per_step: int = 50, seed: int = 0, mode: str = "fresh",
             threads: int = 1) -> FlowTrace:
    """Explicit Euler scheme ``F_{k+1} = F_k + lam * T(F_k)``.

    ``mode="fresh"`` grows new trees at every step. ``mode="frozen"`` grows
    the partitions once (on the initial residuals) and only refits leaf
    values afterwards, which turns the flow into the linear system
    ``dF/dt = W (y - F)`` for squared loss.
    """
    if lam <= 0:
        raise ValueError("lam must be > 0")
    if T_end < 0:
        raise ValueError("T_end must be >= 0")
    if mode not in ("fresh", "frozen"):
        raise ValueError(f"unknown mode {mode!r}")
    if cfg.strategy != "softmax":
        raise ValueError("the boosting flow uses the softmax grower")
    loss = get_loss(loss)
    y = _targets(loss, data, targets)
    steps = n_euler_steps(T_end, lam)
    F = np.full(data.n, init_constant(loss, y))
    Fs = [F.copy()]
    risks = [risk(loss, F, targets=y)]
    norms, slack = [], []
    seeds = tree_seeds(seed, max(steps, 1), stream=1)
    frozen = None
    for k in range(steps):
        r = pseudo_residuals(loss, F, y)
        if mode == "frozen":
            if frozen is None:
                frozen = fit_forest(data, r, cfg, M_per_step, seed=int(seeds[0]), threads=threads)
            # same partitions, leaf values refitted on the current residuals
            per_tree = frozen.leaf_means(r)[frozen.train_leaf_ids]
            M_used = frozen.M
        else:
            forest = fit_forest(data, r, cfg, M_per_step, seed=int(seeds[k]), threads=threads)
            per_tree = forest.tree_predictions_train()
            M_used = forest.M
        step = per_tree.mean(axis=1)
        sd = per_tree.std(axis=1, ddof=1) if M_used > 1 else np.zeros(data.n)
        slack.append(2.0 * lam * float(np.mean(np.abs(r) * sd)) / math.sqrt(M_used))
        F = F + lam * step
        if not np.all(np.isfinite(F)):
            raise FloatingPointError(f"non-finite predictor values after step {k + 1} (t={(k + 1) * lam:g})")
        Fs.append(F.copy())
        risks.append(risk(loss, F, targets=y))
        norms.append(float(np.sqrt(np.mean(step ** 2))))
    times = lam * np.arange(steps + 1)
    return FlowTrace(times, np.array(Fs), np.array(risks), float(lam), int(M_per_step),
                     np.array(norms), np.array(slack), mode)


def scheme_cells(scheme: SplitScheme, p: int) -> dict[str, Hyperrectangle]:
    """Cell of every node word reached by the scheme, root first."""
    cells = {"": Hyperrectangle.unit(p)}
    for word in sorted(scheme.entries, key=lambda w: (len(w), w)):
        if word not in cells:
            raise ValueError(f"scheme entry {word!r} has no parent cell")
        j, u = scheme.entries[word]
        cells[word + "0"], cells[word + "1"] = split(cells[word], j, u)
    return cells


def _scores(X_in: np.ndarray, r_in: np.ndarray, lo: np.ndarray, hi: np.ndarray,
            J: np.ndarray, U: np.ndarray, n: int) -> np.ndarray:
    """Split scores of many (axis, fraction) candidates on one cell."""
    thr = lo[J] + U * (hi[J] - lo[J])
    x = X_in[:, J]                       # (m, *J.shape)
    left = x < thr[None, ...]
    rr = r_in.reshape((-1,) + (1,) * J.ndim)
    s0 = (rr * left).sum(axis=0)
    n0 = left.sum(axis=0)
    s1 = r_in.sum() - s0
    n1 = r_in.shape[0] - n0
    d = np.divide(s0 ** 2, n0, out=np.zeros(s0.shape), where=n0 > 0)
    d += np.divide(s1 ** 2, n1, out=np.zeros(s1.shape), where=n1 > 0)
    return d / n


def rn_derivative(scheme: SplitScheme, F_values, data: Dataset, targets, loss: LossFn,
                  cfg: GrowConfig, n_mc: int = 1000, rng=None) -> float:
    """Monte Carlo estimate of the density of a softmax scheme against the uniform one.

    For each internal node ``v`` with cell ``A_v``, the realized split is
    compared with ``K - 1`` uniform companion splits of the same cell; the
    estimate averages ``prod_v K exp(beta D_v) / sum_k exp(beta D_v^k)``
    over ``n_mc`` companion draws. It is bounded by ``K`` to the number of
    internal nodes.
    """
    loss = get_loss(loss)
    K, beta = cfg.n_candidates, float(cfg.beta)
    y = _targets(loss, data, targets)
    r = pseudo_residuals(loss, F_values, y)
    if K == 1 or len(scheme) == 0:
        return 1.0  # no companions, or an empty product
    gen = np.random.default_rng(rng)
    cells = scheme_cells(scheme, data.p)
    log_terms = np.zeros(n_mc)
    for word, (j, u) in scheme.entries.items():
        cell = cells[word]
        inside = contains_many(cell.lower[None, :], cell.upper[None, :], data.X)[:, 0]
        X_in, r_in = data.X[inside], r[inside]
        d1 = _scores(X_in, r_in, cell.lower, cell.upper, np.array([j]), np.array([u]), data.n)[0]
        J = gen.integers(0, data.p, size=(n_mc, K - 1))
        U = gen.random((n_mc, K - 1))
        dk = _scores(X_in, r_in, cell.lower, cell.upper, J, U, data.n)
        top = np.maximum(dk.max(axis=1), d1)
        num = beta * (d1 - top)
        den = np.log(np.exp(num) + np.exp(beta * (dk - top[:, None])).sum(axis=1))
        log_terms += math.log(K) + num - den
    return float(np.mean(np.exp(log_terms)))
