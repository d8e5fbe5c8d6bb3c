"""Small synthetic datasets so experiments run without external files."""
from __future__ import annotations

import numpy as np

GENERATORS = ("circles", "moons", "linear_sine")


def make_circles(n: int, noise: float = 0.1, factor: float = 0.5, rng=None):
    """Two concentric noisy circles; label 1 marks the inner circle."""
    rng = np.random.default_rng(rng)
    n_out = n // 2
    y = np.r_[np.zeros(n_out), np.ones(n - n_out)]
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    radius = np.where(y == 1, factor, 1.0)
    X = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    X += rng.normal(0.0, noise, X.shape)
    perm = rng.permutation(n)
    return X[perm], y[perm]


def make_moons(n: int, noise: float = 0.1, rng=None):
    """Two interleaving half circles."""
    rng = np.random.default_rng(rng)
    n_out = n // 2
    y = np.r_[np.zeros(n_out), np.ones(n - n_out)]
    t = rng.uniform(0.0, np.pi, n)
    X = np.where(y[:, None] == 0,
                 np.column_stack([np.cos(t), np.sin(t)]),
                 np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)]))
    X += rng.normal(0.0, noise, X.shape)
    perm = rng.permutation(n)
    return X[perm], y[perm]


def make_linear_sine(n: int, p: int = 5, noise: float = 0.3, rng=None):
    """Regression target ``x1 + sin(pi x2)`` plus noise, extra features are pure noise."""
    if p < 2:
        raise ValueError("linear_sine needs p >= 2")
    rng = np.random.default_rng(rng)
    X = rng.uniform(-1.0, 1.0, (n, p))
    y = X[:, 0] + np.sin(np.pi * X[:, 1]) + rng.normal(0.0, noise, n)
    return X, y


def generate(name: str, n: int, rng=None, noise: float | None = None, p: int = 5):
    """Dispatch by name; returns ``(X, y, task)``."""
    if name == "circles":
        X, y = make_circles(n, 0.1 if noise is None else noise, rng=rng)
        return X, y, "classify"
    if name == "moons":
        X, y = make_moons(n, 0.1 if noise is None else noise, rng=rng)
        return X, y, "classify"
    if name == "linear_sine":
        X, y = make_linear_sine(n, p, 0.3 if noise is None else noise, rng=rng)
        return X, y, "regress"
    raise ValueError(f"unknown generator {name!r}; expected one of {', '.join(GENERATORS)}")
