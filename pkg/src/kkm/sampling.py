"""Mini-batch partitions and landmark draws."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from kkm.errors import InputError


@dataclass
class BatchPlan:
    strategy: Literal["stride", "block"]
    B: int
    assignments: list[np.ndarray]  # ascending global indices per batch

    @property
    def N(self) -> int:
        return sum(len(a) for a in self.assignments)

    @property
    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]

    def __len__(self) -> int:
        return self.B

    def __getitem__(self, i: int) -> np.ndarray:
        return self.assignments[i]


@dataclass
class Landmarks:
    """Per-batch landmark positions (indices into the batch, ascending)."""

    positions: list[np.ndarray]
    s: float

    def __getitem__(self, i: int) -> np.ndarray:
        return self.positions[i]


def _check(N: int, B: int) -> None:
    if N < 1 or B < 1:
        raise InputError(f"need N >= 1 and B >= 1, got N={N}, B={B}")
    if B > N:
        raise InputError(f"more batches than samples (B={B} > N={N})")


def stride_partition(N: int, B: int) -> BatchPlan:
    """Interleaved batches: batch i holds i, i+B, i+2B, ..."""
    _check(N, B)
    return BatchPlan("stride", B, [np.arange(i, N, B) for i in range(B)])


def block_partition(N: int, B: int) -> BatchPlan:
    """Contiguous chunks. The first ``N mod B`` chunks hold one extra sample,
    so sizes differ by at most one and no batch is empty."""
    _check(N, B)
    return BatchPlan("block", B, [np.asarray(c) for c in np.array_split(np.arange(N), B)])


def partition(strategy: str, N: int, B: int) -> BatchPlan:
    if strategy == "stride":
        return stride_partition(N, B)
    if strategy == "block":
        return block_partition(N, B)
    raise InputError(f"unknown sampling strategy {strategy!r}")


def landmark_count(batch_size: int, s: float, C: int) -> int:
    n = round(s * batch_size)
    if n < 1:
        warnings.warn(
            f"sparsity {s} leaves no landmark in a batch of {batch_size}; using {C}",
            RuntimeWarning,
            stacklevel=3,
        )
    return min(batch_size, max(C, n))


def sample_landmarks(plan: BatchPlan, s: float, C: int, seed: int | np.random.Generator = 0) -> Landmarks:
    """Uniform draw without replacement of max(C, round(s * N_i)) positions
    from every batch. ``s = 1`` keeps every position."""
    if not (0 < s <= 1):
        raise InputError(f"sparsity must be in (0, 1], got {s}")
    rng = np.random.default_rng(seed)
    positions = []
    for batch in plan.assignments:
        n = len(batch)
        k = landmark_count(n, s, C)
        if k >= n:
            positions.append(np.arange(n))
        else:
            positions.append(np.sort(rng.choice(n, size=k, replace=False)))
    return Landmarks(positions, s)
