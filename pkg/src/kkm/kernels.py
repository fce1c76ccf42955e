"""Mercer kernels and rectangular kernel blocks.

The feature map is never built; every feature-space quantity in the package
goes through the functions here.

Two backends compute blocks:

``pairwise``
    Each entry comes from a per-pair routine (``cdist`` for the RBF squared
    distance, ``einsum`` for the dot product), so an entry does not depend on
    the shape of the block it was computed in. Worker slabs of any size agree
    bitwise, and ``eval_kernel`` matches block entries exactly.
``blas``
    Uses the ``|a|^2 + |b|^2 - 2 a.b`` expansion through a matrix product.
    About an order of magnitude faster on wide data, but GEMM results depend on
    the operand shape, so :func:`kernel_slab` evaluates fixed, globally aligned
    row tiles and slices them to keep worker slabs bitwise reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy.spatial.distance import cdist, pdist

from kkm.errors import InputError

BLAS_TILE = 256


@dataclass(frozen=True)
class KernelSpec:
    kind: Literal["linear", "rbf"] = "rbf"
    sigma: float | None = None  # None means "not resolved yet" (auto)
    d_max_sample_size: int = 2048
    backend: Literal["pairwise", "blas"] = "pairwise"

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise InputError(f"unknown kernel kind {self.kind!r}")
        if self.backend not in ("pairwise", "blas"):
            raise InputError(f"unknown kernel backend {self.backend!r}")
        if self.sigma is not None and not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InputError(f"sigma must be positive, got {self.sigma}")
        if self.d_max_sample_size < 2:
            raise InputError("d_max_sample_size must be at least 2")

    @property
    def resolved(self) -> bool:
        return self.kind == "linear" or self.sigma is not None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "sigma": self.sigma,
            "d_max_sample_size": self.d_max_sample_size,
            "backend": self.backend,
        }


@dataclass
class KernelBlock:
    rows: range
    cols: range
    values: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _check_resolved(spec: KernelSpec) -> None:
    if not spec.resolved:
        raise InputError("rbf kernel needs a sigma; call with_auto_sigma() or pass one")


def _as_samples(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise InputError(f"{name} must be a 2-D sample array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def _values(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # no validation: callers hold already-checked float64 arrays
    if spec.backend == "pairwise":
        if spec.kind == "linear":
            return np.einsum("ij,kj->ik", A, B)
        d2 = cdist(A, B, "sqeuclidean")
    else:
        G = A @ B.T
        if spec.kind == "linear":
            return G
        d2 = np.einsum("ij,ij->i", A, A)[:, None] + np.einsum("ij,ij->i", B, B)[None, :]
        d2 -= 2.0 * G
        np.maximum(d2, 0.0, out=d2)
    d2 *= -1.0 / (2.0 * spec.sigma * spec.sigma)
    return np.exp(d2, out=d2)


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """k(x, y) for two single samples."""
    _check_resolved(spec)
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size < 1 or x.shape != y.shape:
        raise InputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("non-finite sample component")
    return float(_values(spec, x[None, :], y[None, :])[0, 0])


def kernel_block(spec: KernelSpec, A, B, rows: range | None = None, cols: range | None = None) -> KernelBlock:
    """Dense ``|A| x |B|`` block of kernel values, row-major."""
    _check_resolved(spec)
    A = _as_samples(A, "A")
    B = _as_samples(B, "B")
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise InputError("empty sample set")
    if A.shape[1] != B.shape[1]:
        raise InputError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    values = _values(spec, A, B)
    return KernelBlock(
        rows=rows if rows is not None else range(A.shape[0]),
        cols=cols if cols is not None else range(B.shape[0]),
        values=values,
    )


def kernel_slab(spec: KernelSpec, X: np.ndarray, start: int, end: int, Y: np.ndarray) -> np.ndarray:
    """Rows ``start:end`` of the block ``k(X, Y)``.

    The result does not depend on how ``X`` is split into slabs.
    """
    if end <= start:
        return np.empty((0, Y.shape[0]))
    if spec.backend == "pairwise":
        return _values(spec, X[start:end], Y)
    out = np.empty((end - start, Y.shape[0]))
    t0 = (start // BLAS_TILE) * BLAS_TILE
    for t in range(t0, end, BLAS_TILE):
        tile = _values(spec, X[t:t + BLAS_TILE], Y)
        lo, hi = max(t, start), min(t + BLAS_TILE, end)
        out[lo - start:hi - start] = tile[lo - t:hi - t]
    return out


def kernel_diag(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    """k(x, x) for every row of X."""
    _check_resolved(spec)
    if spec.kind == "rbf":
        return np.ones(X.shape[0])
    return np.einsum("ij,ij->i", X, X)


def estimate_d_max(data, spec: KernelSpec, seed: int = 0) -> float:
    """Largest pairwise Euclidean distance over a random subsample.

    Exact when the data has no more than ``spec.d_max_sample_size`` rows.
    """
    X = getattr(data, "samples", data)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("estimate_d_max needs a non-empty 2-D sample array")
    n = X.shape[0]
    if n == 1:
        warnings.warn("single-sample dataset: d_max is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    if n > spec.d_max_sample_size:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=spec.d_max_sample_size, replace=False))
        X = X[idx]
    return float(np.sqrt(pdist(X, "sqeuclidean").max()))


def with_auto_sigma(spec: KernelSpec, data, seed: int = 0, factor: float = 4.0) -> KernelSpec:
    """RBF spec with ``sigma = factor * d_max``; a very wide kernel that
    behaves close to linear on the data's scale."""
    if spec.kind != "rbf":
        return spec
    d_max = estimate_d_max(data, spec, seed)
    if d_max <= 0:
        raise InputError("cannot derive sigma: all sampled points coincide")
    return replace(spec, sigma=factor * d_max)
