"""In-process workers, collective operations and the memory planner.

Workers are execution lanes over shared memory rather than network ranks.
Every cross-lane exchange still goes through one of the collectives below,
which count the bytes each lane contributes and the barriers crossed, so the
communication structure of the row-wise scheme can be measured.
"""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from kkm.errors import CapacityError, InputError, StateError

# bytes per scalar actually moved by the runtime (int64 labels, int64/float64 sums)
SCALAR_BYTES = 8
ABSENT = -1


@dataclass(frozen=True)
class WorkerPartition:
    P: int
    ranges: tuple[range, ...]

    @classmethod
    def split(cls, n: int, P: int) -> "WorkerPartition":
        if P < 1:
            raise InputError(f"worker count must be >= 1, got {P}")
        bounds = [(p * n) // P for p in range(P + 1)]
        return cls(P, tuple(range(bounds[p], bounds[p + 1]) for p in range(P)))

    @property
    def n(self) -> int:
        return self.ranges[-1].stop if self.ranges else 0


@dataclass(frozen=True)
class ResourceModel:
    Q: int = 8  # bytes per scalar
    R: int = 2**30  # bytes of memory per worker

    def __post_init__(self):
        if self.Q not in (4, 8):
            raise InputError(f"scalar size must be 4 or 8 bytes, got {self.Q}")
        if self.R <= 0:
            raise InputError("memory budget must be positive")


@dataclass
class Round:
    op: str
    tag: Any
    sent: list[int]  # bytes contributed by each worker


@dataclass
class Communicator:
    """Runs collectives over per-worker inputs and keeps a traffic log."""

    P: int
    rounds: list[Round] = field(default_factory=list)
    barriers: int = 0
    tag: Any = None

    def _log(self, op: str, sent: list[int]) -> None:
        self.barriers += 1
        self.rounds.append(Round(op, self.tag, sent))

    def allreduce_sum(self, partials: Sequence[np.ndarray]) -> np.ndarray:
        out = allreduce_sum(partials)
        self._log("allreduce_sum", [np.asarray(p).nbytes for p in partials])
        return out

    def allreduce_max(self, partials: Sequence[float]) -> float:
        self._log("allreduce_max", [SCALAR_BYTES] * len(partials))
        return max(partials)

    def allgather(self, slices: Sequence[np.ndarray], part: WorkerPartition) -> np.ndarray:
        out = allgather_labels(slices, part)
        self._log("allgather", [np.asarray(s).nbytes for s in slices])
        return out

    def allreduce_argmin(self, values: Sequence[np.ndarray], indices: Sequence[np.ndarray]):
        out = allreduce_argmin(values, indices)
        self._log("allreduce_argmin", [v.nbytes + i.nbytes for v, i in zip(values, indices)])
        return out

    def bytes_by_tag(self) -> dict[Any, int]:
        """Largest per-worker byte total for every tag."""
        per = defaultdict(lambda: np.zeros(self.P, dtype=np.int64))
        for r in self.rounds:
            per[r.tag][: len(r.sent)] += r.sent
        return {k: int(v.max()) for k, v in per.items()}

    def report(self) -> dict:
        return {
            "workers": self.P,
            "barriers": self.barriers,
            "rounds": [{"op": r.op, "tag": _jsonable(r.tag), "sent": r.sent} for r in self.rounds],
        }


def _jsonable(tag):
    if isinstance(tag, tuple):
        return list(tag)
    return tag


def allreduce_sum(partials: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise sum that does not depend on the order of the partials.

    Integer partials are summed exactly; float partials with ``math.fsum``,
    which is correctly rounded and therefore order-free.
    """
    arrs = [np.asarray(p) for p in partials]
    if not arrs:
        raise StateError("allreduce over zero workers")
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise StateError(f"allreduce partials disagree in shape: {[a.shape for a in arrs]}")
    stacked = np.stack(arrs)
    if np.issubdtype(stacked.dtype, np.integer):
        return stacked.sum(axis=0)
    flat = stacked.reshape(len(arrs), -1)
    return np.array([math.fsum(flat[:, k]) for k in range(flat.shape[1])]).reshape(shape)


def allgather_labels(slices: Sequence[np.ndarray], part: WorkerPartition) -> np.ndarray:
    if len(slices) != part.P:
        raise StateError(f"{len(slices)} slices for {part.P} workers")
    expect = 0
    for sl, r in zip(slices, part.ranges):
        if r.start != expect or len(sl) != len(r):
            raise StateError(f"slice for rows {r} has length {len(sl)} (gap or overlap)")
        expect = r.stop
    return np.concatenate([np.asarray(s) for s in slices])


def allreduce_argmin(values: Sequence[np.ndarray], indices: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster winner over workers' ``(value, global index)`` candidates.

    Lower value wins, then lower index. Index ``ABSENT`` marks a missing
    candidate; a cluster with no candidate anywhere stays ABSENT.
    """
    V = np.stack([np.asarray(v, dtype=np.float64) for v in values])
    I = np.stack([np.asarray(i, dtype=np.int64) for i in indices])
    if V.shape != I.shape:
        raise StateError("candidate values and indices disagree in shape")
    present = I != ABSENT
    V = np.where(present, V, np.inf)
    big = np.iinfo(np.int64).max
    keyI = np.where(present, I, big)
    best_v = np.full(V.shape[1], np.inf)
    best_i = np.full(V.shape[1], ABSENT, dtype=np.int64)
    for w in range(V.shape[0]):
        take = present[w] & (
            (best_i == ABSENT) | (V[w] < best_v) | ((V[w] == best_v) & (keyI[w] < best_i))
        )
        best_v = np.where(take, V[w], best_v)
        best_i = np.where(take, I[w], best_i)
    return best_i, best_v


class WorkerPool:
    """P lanes that run the same function on their own row range."""

    def __init__(self, P: int = 1):
        if P < 1:
            raise InputError(f"worker count must be >= 1, got {P}")
        self.P = P
        self._ex = ThreadPoolExecutor(max_workers=P, thread_name_prefix="kkm") if P > 1 else None

    def map(self, fn: Callable, *iterables) -> list:
        if self._ex is None:
            return [fn(*args) for args in zip(*iterables)]
        return list(self._ex.map(fn, *iterables))

    def close(self) -> None:
        if self._ex is not None:
            self._ex.shutdown()
            self._ex = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class MemoryTracker:
    """Bookkeeping of the large per-worker arrays (kernel slab, f, labels, g)."""

    def __init__(self):
        self.live: dict[str, int] = {}
        self.peak = 0

    def hold(self, name: str, nbytes: int) -> None:
        self.live[name] = int(nbytes)
        self.peak = max(self.peak, sum(self.live.values()))

    def drop(self, name: str) -> None:
        self.live.pop(name, None)


# ---------------------------------------------------------------------------
# memory planning


def footprint(N: int, B: int, P: int, C: int, Q: int = 8) -> int:
    """Bytes per worker: kernel rows, similarity rows, labels, compactness
    and cardinalities."""
    nb = -(-N // B)
    rows = -(-N // (B * P))
    return Q * (rows * (nb + C) + nb + 2 * C)


def closed_form_min_batches(N: int, C: int, P: int, model: ResourceModel) -> float:
    """Continuous batch count solving footprint(B) = R with ceilings dropped.

    With ``x = N/B`` the footprint is ``Q(x^2/P + x(C/P + 1) + 2C)``; the
    positive root of that quadratic gives ``B = N/x``. Returns ``inf`` when
    the budget cannot even hold the ``2C`` terms.
    """
    a = C / P + 1.0
    disc = a * a - 8.0 * C / P + 4.0 * model.R / (model.Q * P)
    if disc <= 0:
        return math.inf
    denom = -a + math.sqrt(disc)
    if denom <= 0:
        return math.inf
    return (2.0 * N / P) / denom


@dataclass
class Plan:
    B_min: int
    closed_form: float
    footprint: int
    table: list[tuple[int, int]]


def plan_min_batches(N: int, C: int, P: int, model: ResourceModel) -> Plan:
    """Smallest B whose footprint fits in ``model.R``, by bisection over the
    (non-increasing) integer footprint."""
    if min(N, C, P) < 1:
        raise InputError("N, C and P must be positive")
    fp = lambda b: footprint(N, b, P, C, model.Q)  # noqa: E731
    if fp(N) > model.R:
        raise CapacityError(
            f"no batch count fits {model.R} bytes; smallest footprint is {fp(N)} bytes at B={N}",
            min_footprint=fp(N),
        )
    lo, hi = 1, N
    while lo < hi:
        mid = (lo + hi) // 2
        if fp(mid) <= model.R:
            hi = mid
        else:
            lo = mid + 1
    table = sorted({(b, fp(b)) for b in (1, 2, 4, 8, 16, 32, 64, lo) if b <= N})
    return Plan(lo, closed_form_min_batches(N, C, P, model), fp(lo), table)


def message_size_bound(N: int, B: int, P: int, C: int, model: ResourceModel | int = SCALAR_BYTES) -> int:
    """Upper bound on bytes a worker sends per inner iteration: its whole
    label slice plus two C-vectors."""
    Q = model.Q if isinstance(model, ResourceModel) else int(model)
    return Q * (-(-N // (B * P)) + 2 * C)
