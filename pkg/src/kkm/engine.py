"""Inner gradient-descent loop of kernel k-means on one mini-batch.

Labels are updated synchronously from

    u_i = argmin_j  g_j - 2 f_ij
    g_j = (1/|w_j|^2) sum_{m,n in L, u_m=u_n=j} K_mn
    f_ij = (1/|w_j|) sum_{m in L, u_m=j} K_im

where L is the landmark set of the batch (every sample when s = 1) and |w_j|
counts the landmarks labelled j. Each worker holds a contiguous slab of rows
of K restricted to landmark columns; per iteration it exchanges one reduction
(compactness numerators and counts) and one label gather.

The compactness numerators travel as 64-bit fixed-point integers. Integer
addition is associative, so the reduced value, and every label derived from
it, is bitwise identical for any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from kkm.collectives import Communicator, MemoryTracker, WorkerPartition, WorkerPool
from kkm.errors import StateError

UNASSIGNED = -1
ROW_CHUNK = 1024


@dataclass
class GdConfig:
    max_iters: int = 300
    label_change_tolerance: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.label_change_tolerance < 0:
            raise ValueError("label_change_tolerance must be >= 0")


@dataclass
class ClusterState:
    C: int
    labels: np.ndarray
    counts: np.ndarray
    g: np.ndarray
    f: list[np.ndarray] = field(default_factory=list)  # one slab per worker


@dataclass
class GdResult:
    labels: np.ndarray
    iterations: int
    converged: bool
    cost_trace: list[float]
    state: ClusterState
    history: list[np.ndarray] | None = None

    @property
    def truncated(self) -> bool:
        return not self.converged


def fixed_point_exponent(n_landmarks: int, max_diag: float) -> int:
    """Binary exponent for the compactness fixed-point encoding.

    For a PSD kernel |K_mn| <= max_diag, so every numerator is bounded by
    n_landmarks^2 * max_diag; the exponent keeps that bound under 2^61.
    """
    bound = float(n_landmarks) ** 2 * max(float(max_diag), 1e-300)
    return int(min(1000, math.floor(61 - math.log2(bound))))


def similarity_sums(K: np.ndarray, col_labels: np.ndarray, C: int) -> np.ndarray:
    """S_ij = sum of K_im over landmark columns m labelled j.

    Row sums run over C-contiguous gathers, processed in fixed row chunks, so
    a row's value never depends on the slab it sits in.
    """
    S = np.zeros((K.shape[0], C))
    groups = [np.flatnonzero(col_labels == j) for j in range(C)]
    for lo in range(0, K.shape[0], ROW_CHUNK):
        chunk = K[lo:lo + ROW_CHUNK]
        for j, cols in enumerate(groups):
            if cols.size:
                S[lo:lo + ROW_CHUNK, j] = np.take(chunk, cols, axis=1).sum(axis=1)
    return S


def compactness_partial(S: np.ndarray, row_labels: np.ndarray, row_is_landmark: np.ndarray,
                        C: int, exponent: int) -> tuple[np.ndarray, np.ndarray]:
    """Owned rows' share of the compactness numerators (fixed point) and of the
    landmark cardinalities."""
    mask = row_is_landmark & (row_labels != UNASSIGNED)
    lab = row_labels[mask]
    r = S[np.flatnonzero(mask), lab]
    q = np.rint(np.ldexp(r, exponent)).astype(np.int64)
    num = np.zeros(C, dtype=np.int64)
    np.add.at(num, lab, q)
    counts = np.bincount(lab, minlength=C).astype(np.int64)
    return num, counts


def finalize_compactness(num: np.ndarray, counts: np.ndarray, exponent: int) -> np.ndarray:
    g = np.full(len(counts), np.inf)
    nz = counts > 0
    g[nz] = np.ldexp(num[nz].astype(np.float64), -exponent) / counts[nz].astype(np.float64) ** 2
    return g


def compute_similarity(S: np.ndarray, counts: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """f = S / |w_j|; empty clusters get -inf so they never win."""
    f = np.divide(S, np.where(counts > 0, counts, 1), out=out)
    f[:, counts == 0] = -np.inf
    return f


def update_labels(g: np.ndarray, f: np.ndarray) -> np.ndarray:
    """argmin_j g_j - 2 f_ij, lowest j on ties."""
    scores = g[None, :] - 2.0 * f
    labels = np.argmin(scores, axis=1)
    if f.shape[0] and not np.all(np.isfinite(scores[np.arange(f.shape[0]), labels])):
        raise StateError("every cluster is empty; no label can be assigned")
    return labels.astype(np.int64)


def compute_compactness(K: np.ndarray, labels: np.ndarray, landmarks: np.ndarray | None = None) -> np.ndarray:
    """Single-worker compactness g from a square kernel block over the batch.

    ``K`` has all batch rows and the landmark columns (all columns when
    ``landmarks`` is None).
    """
    labels = np.asarray(labels)
    n = K.shape[0]
    land = np.arange(n) if landmarks is None else np.asarray(landmarks)
    C = int(labels.max()) + 1 if labels.size else 0
    S = similarity_sums(K, labels[land], C)
    is_land = np.zeros(n, dtype=bool)
    is_land[land] = True
    diag_bound = float(np.max(np.abs(K))) if K.size else 1.0
    e = fixed_point_exponent(len(land), diag_bound)
    num, counts = compactness_partial(S, labels, is_land, C, e)
    return finalize_compactness(num, counts, e)


def batch_cost(diag_landmarks_sum: float, num: np.ndarray, counts: np.ndarray, exponent: int) -> float:
    """sum_i K_ii - sum_j |w_j| g_j over the counted (landmark) samples."""
    nz = counts > 0
    return float(diag_landmarks_sum - np.sum(np.ldexp(num[nz].astype(np.float64), -exponent) / counts[nz]))


def inner_gd_loop(
    slabs: list[np.ndarray],
    U0: np.ndarray,
    cfg: GdConfig,
    landmarks: np.ndarray,
    diag_landmarks: np.ndarray,
    C: int,
    part: WorkerPartition,
    pool: WorkerPool | None = None,
    comm: Communicator | None = None,
    tag=None,
    record_history: bool = False,
    trackers: list[MemoryTracker] | None = None,
) -> GdResult:
    """Iterate label updates on one batch until no label changes (or at most
    ``cfg.label_change_tolerance`` do) or ``cfg.max_iters`` is reached.

    ``slabs[p]`` holds rows ``part.ranges[p]`` of the batch kernel restricted
    to the ``landmarks`` columns (batch positions, ascending).
    """
    pool = pool or WorkerPool(1)
    comm = comm or Communicator(part.P)
    n = part.n
    labels = np.asarray(U0, dtype=np.int64).copy()
    if labels.shape != (n,) or np.any((labels < 0) | (labels >= C)):
        raise StateError("initial labels must assign every batch sample to a cluster")
    land = np.asarray(landmarks)
    is_land = np.zeros(n, dtype=bool)
    is_land[land] = True
    e = fixed_point_exponent(len(land), float(diag_landmarks.max()) if len(land) else 1.0)
    diag_sum = float(np.sum(diag_landmarks))
    ranges = part.ranges

    if trackers is not None:
        for p, tr in enumerate(trackers):
            tr.hold("kernel", slabs[p].nbytes)
            tr.hold("labels", labels.nbytes)
            tr.hold("f", len(ranges[p]) * C * 8)
            tr.hold("g", 2 * C * 8)

    def phase_a(K, r):
        S = similarity_sums(K, labels[land], C)
        num, cnt = compactness_partial(S, labels[r.start:r.stop], is_land[r.start:r.stop], C, e)
        return S, np.concatenate([num, cnt])

    def phase_b(S, r, g, counts):
        f = compute_similarity(S, counts, out=S)
        return f, update_labels(g, f)

    history = [labels.copy()] if record_history else None
    costs: list[float] = []
    converged = False
    t = 0
    f_slabs: list[np.ndarray] = []
    g = np.full(C, np.inf)
    counts = np.zeros(C, dtype=np.int64)
    changes = -1
    while t < cfg.max_iters:
        comm.tag = (tag, t) if tag is not None else t
        a = pool.map(phase_a, slabs, ranges)
        red = comm.allreduce_sum([x[1] for x in a])
        num, counts = red[:C], red[C:]
        g = finalize_compactness(num, counts, e)
        costs.append(batch_cost(diag_sum, num, counts, e))
        b = pool.map(phase_b, [x[0] for x in a], ranges, [g] * part.P, [counts] * part.P)
        f_slabs = [x[0] for x in b]
        new = comm.allgather([x[1] for x in b], part)
        changes = int(np.count_nonzero(new != labels))
        labels = new
        t += 1
        if record_history:
            history.append(labels.copy())
        if changes <= cfg.label_change_tolerance:
            converged = True
            break
    comm.tag = None

    if changes != 0:
        # f/g above were built from the previous labels; rebuild from the final ones
        comm.tag = (tag, "final") if tag is not None else "final"
        a = pool.map(phase_a, slabs, ranges)
        red = comm.allreduce_sum([x[1] for x in a])
        comm.tag = None
        num, counts = red[:C], red[C:]
        g = finalize_compactness(num, counts, e)
        f_slabs = [compute_similarity(x[0], counts, out=x[0]) for x in a]

    state = ClusterState(C=C, labels=labels, counts=counts, g=g, f=f_slabs)
    return GdResult(labels, t, converged, costs, state, history)
