"""Input-space k-means competitors: full-batch Lloyd and Sculley's
mini-batch SGD with per-centre 1/count learning rates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from kkm.errors import InputError


@dataclass
class BaselineConfig:
    C: int
    seed: int = 0
    max_iters: int = 300
    sgd_batch_size: int = 1000
    sgd_iterations: int | None = None  # default: one pass worth of batches

    def __post_init__(self):
        if self.C < 1 or self.max_iters < 1 or self.sgd_batch_size < 1:
            raise InputError("baseline parameters must be positive")
        if self.sgd_iterations is not None and self.sgd_iterations < 1:
            raise InputError("sgd_iterations must be positive")


@dataclass
class BaselineResult:
    labels: np.ndarray
    centers: np.ndarray
    cost: float
    cost_trace: list[float]
    iterations: int
    counts: np.ndarray | None = None


def _sqdist(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = np.einsum("ij,ij->i", X, X)[:, None] - 2.0 * X @ centers.T + np.einsum("ij,ij->i", centers, centers)[None, :]
    return np.maximum(d, 0.0)


def assign(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = _sqdist(X, centers)
    lab = np.argmin(d, axis=1)
    return lab, d[np.arange(len(X)), lab]


def kmeanspp(X: np.ndarray, C: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = _sqdist(X, centers[0][None])[:, 0]
    for _ in range(1, C):
        total = d2.sum()
        if total > 0:
            i = min(int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right")), n - 1)
        else:
            i = int(rng.integers(n))
        centers.append(X[i])
        d2 = np.minimum(d2, _sqdist(X, X[i][None])[:, 0])
    return np.array(centers)


def _check(X, cfg):
    X = np.asarray(getattr(X, "samples", X), dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < cfg.C:
        raise InputError(f"need at least C={cfg.C} samples")
    return X


def lloyd_kmeans(data, cfg: BaselineConfig) -> BaselineResult:
    X = _check(data, cfg)
    rng = np.random.default_rng(cfg.seed)
    centers = kmeanspp(X, cfg.C, rng)
    labels, d = assign(X, centers)
    trace = [float(d.sum())]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        for j in range(cfg.C):
            members = labels == j
            if members.any():  # an empty cluster keeps its centre
                centers[j] = X[members].mean(axis=0)
        new, d = assign(X, centers)
        trace.append(float(d.sum()))
        if np.array_equal(new, labels):
            break
        labels = new
    return BaselineResult(labels, centers, trace[-1], trace, it)


def sgd_minibatch_kmeans(data, cfg: BaselineConfig) -> BaselineResult:
    X = _check(data, cfg)
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    b = min(cfg.sgd_batch_size, n)
    iters = cfg.sgd_iterations or math.ceil(n / b)
    centers = kmeanspp(X[rng.choice(n, size=b, replace=False)], cfg.C, rng)
    counts = np.zeros(cfg.C, dtype=np.int64)
    for _ in range(iters):
        batch = X[rng.choice(n, size=b, replace=False)]
        lab, _ = assign(batch, centers)
        for x, j in zip(batch, lab):
            counts[j] += 1
            eta = 1.0 / counts[j]
            centers[j] = (1.0 - eta) * centers[j] + eta * x
    labels, d = assign(X, centers)
    return BaselineResult(labels, centers, float(d.sum()), [float(d.sum())], iters, counts)
