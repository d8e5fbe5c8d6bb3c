"""Synthetic variable-importance scenarios S1 to S10.

Feature indices are 0-based in code: ``X[:, 0]`` is the first feature.
Signal sets are returned 0-based as well.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCENARIO_IDS = tuple(f"S{i}" for i in range(1, 11))

SIGNAL_SETS = {
    "S1": (0, 1, 2), "S2": (0, 1), "S3": (0, 1), "S4": (0, 1), "S5": (0,),
    "S6": (0, 1), "S7": (0, 1, 2, 3, 4), "S8": (0, 1, 2), "S9": (0, 1, 2), "S10": (0, 1, 2),
}

DEFAULT_P = {sid: 20 for sid in SCENARIO_IDS} | {"S7": 50}


@dataclass(frozen=True)
class Scenario:
    id: str
    n: int = 500
    seed: int = 0
    p: int | None = None
    signal_set: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.id not in SIGNAL_SETS:
            raise ValueError(f"unknown scenario {self.id!r}; expected one of {', '.join(SCENARIO_IDS)}")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        p = DEFAULT_P[self.id] if self.p is None else self.p
        if p < 16 and self.id in ("S6", "S7", "S9"):
            raise ValueError(f"{self.id} needs more features")
        if p < max(SIGNAL_SETS[self.id]) + 2 or (self.id == "S4" and p < 4):
            raise ValueError(f"p={p} too small for {self.id}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "signal_set", SIGNAL_SETS[self.id])

    def rng(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, SCENARIO_IDS.index(self.id)])


def _sine_part(x):
    return 0.8 * 2.0 * np.sin(np.pi / 2.0 * x)


def generate_scenario(scenario: Scenario) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    """Raw covariates, response and signal set for one replicate."""
    rng = scenario.rng()
    n, p, sid = scenario.n, scenario.p, scenario.id
    if sid == "S1":
        idx = np.arange(p)
        cov = 0.5 ** np.abs(idx[:, None] - idx[None, :])
        X = rng.multivariate_normal(np.zeros(p), cov, size=n, method="cholesky")
        y = X[:, 0] + _sine_part(X[:, 1]) + 0.6 * np.maximum(0.0, X[:, 2]) + rng.normal(0, 0.5, n)
    elif sid == "S2":
        X = rng.standard_normal((n, p))
        z = rng.standard_normal(n)
        X[:, 0] = z + rng.normal(0, 0.1, n)
        X[:, 1] = z + rng.normal(0, 0.1, n)
        y = np.sin(z) + rng.normal(0, 0.3, n)
    elif sid == "S3":
        X = rng.random((n, p))
        y = ((X[:, 0] > 0.5) ^ (X[:, 1] > 0.5)).astype(float)
        flip = rng.random(n) < 0.05
        y[flip] = 1.0 - y[flip]
    elif sid == "S4":
        X = rng.standard_normal((n, p))
        X[:, 3] = rng.integers(0, 50, n)
        y = X[:, 0] + _sine_part(X[:, 1]) + rng.normal(0, 0.5, n)
    elif sid == "S5":
        X = rng.random((n, p))
        y = (X[:, 0] > 0.8).astype(float) + rng.normal(0, 0.1, n)
    elif sid == "S6":
        X = rng.standard_normal((n, p))
        for j in range(10, min(20, p)):
            X[:, j] = X[:, j - 10] + rng.normal(0, 0.05, n)
        y = X[:, 0] + _sine_part(X[:, 1]) + rng.normal(0, 0.5, n)
    elif sid == "S7":
        X = rng.random((n, p))
        for i in range(5):
            X[:, i + 10] = 0.9 * X[:, i] + 0.436 * X[:, i + 10]
        y = X[:, :5] @ np.array([3.0, 2.5, 2.0, 1.5, 1.0]) + rng.normal(0, 1.5, n)
    elif sid == "S8":
        X = rng.standard_normal((n, p))
        y = 0.5 * X[:, 0] + 0.4 * X[:, 1] + 0.3 * X[:, 2] + rng.normal(0, 2.0, n)
    elif sid == "S9":
        X = rng.standard_normal((n, p))
        for i in range(3):
            X[:, i + 5] = 0.95 * X[:, i] + 0.312 * X[:, i + 5]
            X[:, i + 10] = 0.95 * X[:, i] + 0.312 * X[:, i + 10]
        y = 3.0 * X[:, 0] + 2.5 * X[:, 1] + 2.0 * X[:, 2] + rng.normal(0, 0.5, n)
    else:  # S10
        X = rng.random((n, p))
        eps = rng.normal(0, 0.3, n)
        y = np.where(X[:, 0] > 0.5, 2.0 * X[:, 1], 2.0 * X[:, 2]) + eps
    return X, y, scenario.signal_set


def minmax_scale(X) -> np.ndarray:
    """Column-wise rescaling onto ``[0, 1]``; constant columns map to 0."""
    X = np.asarray(X, dtype=float)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    out = np.divide(X - lo, span, out=np.zeros_like(X), where=span > 0)
    return np.clip(out, 0.0, 1.0)
