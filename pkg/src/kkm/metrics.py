"""Clustering quality and diagnostic measures."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from kkm.errors import InputError, StateError
from kkm.kernels import KernelSpec, kernel_block, kernel_diag


@dataclass
class EvaluationReport:
    accuracy: float
    nmi: float
    global_cost: float | None = None
    cost_traces: list[list[float]] = field(default_factory=list)
    displacement: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(y, u) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y).ravel()
    u = np.asarray(u).ravel()
    if y.size == 0:
        raise InputError("empty label vectors")
    if y.shape != u.shape:
        raise InputError(f"label vectors differ in length: {y.size} vs {u.size}")
    return y, u


def _contingency(y: np.ndarray, u: np.ndarray) -> np.ndarray:
    """o[c, k]: samples in cluster c with true class k (classes sorted)."""
    _, yi = np.unique(y, return_inverse=True)
    _, ui = np.unique(u, return_inverse=True)
    table = np.zeros((ui.max() + 1, yi.max() + 1), dtype=np.int64)
    np.add.at(table, (ui, yi), 1)
    return table


def majority_mapping(y, u) -> dict:
    """Cluster id -> the most frequent true class among its members
    (smallest class id on ties)."""
    y, u = _pair(y, u)
    classes = np.unique(y)
    clusters = np.unique(u)
    table = _contingency(y, u)
    return {clusters[c].item(): classes[np.argmax(table[c])].item() for c in range(len(clusters))}


def clustering_accuracy(y, u) -> float:
    """Fraction of samples whose cluster's majority class is their own class.

    Several clusters may map to the same class.
    """
    y, u = _pair(y, u)
    table = _contingency(y, u)
    return float(table.max(axis=1).sum() / y.size)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(y, u) -> float:
    """Mutual information normalised by sqrt(H(y) H(u))."""
    y, u = _pair(y, u)
    n = y.size
    o = _contingency(y, u)
    n_u = o.sum(axis=1)
    n_y = o.sum(axis=0)
    h_u, h_y = _entropy(n_u, n), _entropy(n_y, n)
    if h_u == 0.0 or h_y == 0.0:
        # a single cluster or a single class; identical only if both are single
        return 1.0 if (h_u == 0.0 and h_y == 0.0) else 0.0
    nz = o > 0
    outer = np.outer(n_u, n_y)
    mi = float(np.sum(o[nz] / n * np.log(n * o[nz] / outer[nz])))
    return max(0.0, mi / np.sqrt(h_u * h_y))


def global_cost(data, medoids, labels, kernel: KernelSpec) -> float:
    """sum_i k(x_i,x_i) - 2 k(x_i, m_{u_i}) + k(m_{u_i}, m_{u_i}).

    ``medoids`` is a C x d array of prototype samples; a row of NaN marks an
    absent prototype.
    """
    X = np.asarray(getattr(data, "samples", data), dtype=np.float64)
    M = np.asarray(medoids, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (X.shape[0],):
        raise InputError("one label per sample required")
    total = 0.0
    for j in np.unique(labels):
        if j < 0 or j >= len(M) or not np.all(np.isfinite(M[j])):
            raise StateError(f"label {j} refers to an absent medoid")
        rows = X[labels == j]
        m = M[j:j + 1]
        k_xm = kernel_block(kernel, rows, m).values[:, 0]
        k_mm = kernel_diag(kernel, m)[0]
        d = kernel_diag(kernel, rows) - 2.0 * k_xm + k_mm
        total += float(np.sum(np.maximum(d, 0.0)))
    return total


def medoid_displacement(previous, new, kernel: KernelSpec) -> np.ndarray:
    """Feature-space distance between matching prototypes; NaN where either
    side is absent."""
    P = np.asarray(previous, dtype=np.float64)
    N = np.asarray(new, dtype=np.float64)
    if P.shape != N.shape:
        raise InputError("prototype sets differ in shape")
    out = np.full(len(P), np.nan)
    for j in range(len(P)):
        if np.all(np.isfinite(P[j])) and np.all(np.isfinite(N[j])):
            a, b = P[j:j + 1], N[j:j + 1]
            d2 = kernel_diag(kernel, a)[0] + kernel_diag(kernel, b)[0] - 2.0 * kernel_block(kernel, a, b).values[0, 0]
            out[j] = np.sqrt(max(d2, 0.0))
    return out


def elbow_select(costs: dict[int, float]) -> int:
    """Cluster count at the knee: largest discrete second difference of the
    cost curve, smallest C on ties. A straight curve has no knee; the
    smallest C is returned with a warning."""
    if len(costs) < 3:
        raise InputError("elbow selection needs at least three cluster counts")
    cs = sorted(costs)
    v = np.array([costs[c] for c in cs], dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InputError("non-finite cost in elbow scan")
    d2 = v[:-2] - 2.0 * v[1:-1] + v[2:]
    k = int(np.argmax(d2))
    if d2[k] <= 1e-9 * max(np.max(np.abs(v)), 1e-300):
        warnings.warn("cost curve has no knee; returning the smallest cluster count", RuntimeWarning, stacklevel=2)
        return cs[0]
    return cs[k + 1]
