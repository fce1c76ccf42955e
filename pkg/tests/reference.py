"""Dense, single-threaded kernel k-means used as an oracle.

Deliberately naive: the full N x N kernel matrix is built with explicit
loops over a hand-written kernel, and every quantity is recomputed from
scratch with Python sums of masked blocks.
"""

from __future__ import annotations

import math

import numpy as np


def kernel_value(kind: str, sigma: float | None, x: np.ndarray, y: np.ndarray) -> float:
    if kind == "linear":
        return float(sum(a * b for a, b in zip(x, y)))
    d2 = sum((a - b) ** 2 for a, b in zip(x, y))
    return math.exp(-d2 / (2.0 * sigma * sigma))


def dense_kernel(kind: str, sigma: float | None, X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
    Y = X if Y is None else Y
    K = np.empty((len(X), len(Y)))
    for i, x in enumerate(X):
        for j, y in enumerate(Y):
            K[i, j] = kernel_value(kind, sigma, x, y)
    return K


def compactness(K: np.ndarray, labels: np.ndarray, C: int) -> np.ndarray:
    g = np.full(C, np.inf)
    for j in range(C):
        m = np.flatnonzero(labels == j)
        if m.size:
            g[j] = K[np.ix_(m, m)].sum() / m.size**2
    return g


def similarity(K: np.ndarray, labels: np.ndarray, C: int) -> np.ndarray:
    f = np.full((K.shape[0], C), -np.inf)
    for j in range(C):
        m = np.flatnonzero(labels == j)
        if m.size:
            f[:, j] = K[:, m].sum(axis=1) / m.size
    return f


def direct_cost(K: np.ndarray, labels: np.ndarray, C: int) -> float:
    """Sum over samples of the feature-space distance to the cluster mean,
    written out term by term."""
    total = 0.0
    for j in range(C):
        m = np.flatnonzero(labels == j)
        if not m.size:
            continue
        within = K[np.ix_(m, m)].sum() / m.size**2
        for i in m:
            total += K[i, i] - 2.0 * K[i, m].sum() / m.size + within
    return total


def kmeans(K: np.ndarray, U0: np.ndarray, C: int, max_iters: int = 300) -> list[np.ndarray]:
    """Synchronous label iterations from U0; returns every label vector."""
    labels = np.asarray(U0).copy()
    history = [labels.copy()]
    for _ in range(max_iters):
        g = compactness(K, labels, C)
        f = similarity(K, labels, C)
        new = np.array([min(range(C), key=lambda j: (g[j] - 2.0 * f[i, j], j)) for i in range(K.shape[0])])
        history.append(new)
        if np.array_equal(new, labels):
            break
        labels = new
    return history


def kmeanspp(K: np.ndarray, C: int, rng: np.random.Generator) -> list[int]:
    """D^2 seeding over a precomputed kernel matrix, drawing from ``rng`` in
    the same order as the library (one integer, then one uniform per pick)."""
    n = K.shape[0]
    chosen = [int(rng.integers(n))]
    while len(chosen) < C:
        d2 = np.array([min(max(K[i, i] - 2 * K[i, m] + K[m, m], 0.0) for m in chosen) for i in range(n)])
        d2[chosen] = 0.0
        cdf = np.cumsum(d2)
        pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        chosen.append(min(pick, n - 1))
    return chosen


def nearest(K_x_m: np.ndarray, k_mm: np.ndarray) -> np.ndarray:
    return np.array([min(range(len(k_mm)), key=lambda j: (k_mm[j] - 2 * row[j], j)) for row in K_x_m])


def planted_mixture(rng: np.random.Generator, N: int, d: int, C: int, spread: float = 3.0):
    centers = rng.normal(0.0, spread, size=(C, d))
    y = rng.integers(0, C, size=N)
    X = centers[y] + rng.normal(size=(N, d))
    return X, y
