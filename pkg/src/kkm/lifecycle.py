"""Outer loop over mini-batches.

For every batch: compute the kernel slab of each worker, initialise labels
from the current global medoids (kernel k-means++ seeds on the first batch),
run the inner loop, extract one medoid per cluster and fold it into the
global medoid with weight ``alpha_j = |w_j^i| / (n_j + |w_j^i|)``.
"""

from __future__ import annotations

import logging
import time
import warnings
import zlib
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from kkm.collectives import ABSENT, Communicator, allreduce_argmin, MemoryTracker, WorkerPartition, WorkerPool
from kkm.engine import GdConfig, GdResult, inner_gd_loop
from kkm.errors import InputError
from kkm.kernels import KernelSpec, kernel_diag, kernel_slab, with_auto_sigma
from kkm.metrics import global_cost, medoid_displacement
from kkm.sampling import Landmarks, partition, sample_landmarks

log = logging.getLogger(__name__)


def rng_stream(seed: int, name: str, restart: int = 0) -> np.random.Generator:
    """Independent generator for one named component of one restart."""
    ss = np.random.SeedSequence(seed, spawn_key=(restart, zlib.crc32(name.encode())))
    return np.random.default_rng(ss)


@dataclass
class GlobalState:
    medoids: np.ndarray  # global sample index per cluster, ABSENT if none yet
    n: np.ndarray  # samples absorbed per cluster over finished batches
    batch_counter: int = 0

    @classmethod
    def empty(cls, C: int) -> "GlobalState":
        return cls(np.full(C, ABSENT, dtype=np.int64), np.zeros(C, dtype=np.int64))

    @property
    def present(self) -> np.ndarray:
        return self.medoids != ABSENT


@dataclass
class RunConfig:
    C: int
    B: int = 1
    s: float = 1.0
    P: int = 1
    kernel: KernelSpec = field(default_factory=KernelSpec)
    sampling: str = "stride"
    seed: int = 0
    restarts: int = 1
    gd: GdConfig = field(default_factory=GdConfig)
    keep_previous_medoid: bool = False  # also offer the old global medoid in the merge
    prefetch: bool = False  # compute the next batch's kernel slabs in the background
    record_history: bool = False
    track_global_cost: bool = False

    def __post_init__(self):
        if self.C < 1 or self.B < 1 or self.P < 1 or self.restarts < 1:
            raise InputError("C, B, P and restarts must all be >= 1")
        if not (0 < self.s <= 1):
            raise InputError(f"sparsity must be in (0, 1], got {self.s}")
        if self.sampling not in ("stride", "block"):
            raise InputError(f"unknown sampling strategy {self.sampling!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = self.kernel.to_dict()
        return d


@dataclass
class BatchTrace:
    index: int
    size: int
    n_landmarks: int
    iterations: int
    converged: bool
    cost_trace: list[float]
    counts: list[int]
    batch_medoids: list[int]
    alpha: list[float]
    medoids: list[int]
    displacement: list[float]
    global_cost: float | None = None
    label_history: list[np.ndarray] | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("label_history")
        d["displacement"] = [None if np.isnan(x) else x for x in self.displacement]
        return d


@dataclass
class RunResult:
    labels: np.ndarray
    state: GlobalState
    medoid_vectors: np.ndarray  # C x d, NaN rows for absent clusters
    kernel: KernelSpec
    final_cost: float
    traces: list[BatchTrace]
    comm: Communicator
    timings: dict[str, float]
    peak_memory: list[int]
    restart: int = 0
    restart_costs: list[float] = field(default_factory=list)
    initial_medoids: np.ndarray | None = None

    @property
    def medoids(self) -> np.ndarray:
        return self.state.medoids


# ---------------------------------------------------------------------------
# components


def kernel_kmeanspp_init(X: np.ndarray, C: int, kernel: KernelSpec, rng: np.random.Generator) -> np.ndarray:
    """C distinct row indices of X picked by D^2 sampling in feature space.

    The first pick is uniform; each further pick has probability proportional
    to k(x,x) - 2 k(x,m) + k(m,m) for its nearest chosen m.
    """
    n = X.shape[0]
    if n < C:
        raise InputError(f"cannot seed {C} medoids from {n} samples")
    diag = kernel_diag(kernel, X)
    chosen = [int(rng.integers(n))]
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True

    def dist_to(i):
        k = kernel_slab(kernel, X, 0, n, X[i:i + 1])[:, 0]
        return np.maximum(diag - 2.0 * k + diag[i], 0.0)

    d2 = dist_to(chosen[0])
    while len(chosen) < C:
        d2[taken] = 0.0
        total = float(d2.sum())
        if total > 0:
            cdf = np.cumsum(d2)
            pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            pick = min(pick, n - 1)
            while taken[pick]:  # only reachable through round-off at the cdf edges
                pick = (pick + 1) % n
        else:
            # every remaining sample coincides with a chosen one
            pick = int(rng.choice(np.flatnonzero(~taken)))
        chosen.append(pick)
        taken[pick] = True
        d2 = np.minimum(d2, dist_to(pick))
    return np.asarray(chosen, dtype=np.int64)


def init_labels_from_medoids(X: np.ndarray, medoid_vectors: np.ndarray, kernel: KernelSpec,
                             part: WorkerPartition | None = None, pool: WorkerPool | None = None,
                             comm: Communicator | None = None) -> np.ndarray:
    """Nearest-medoid labels by feature-space distance, lowest j on ties.

    Rows of ``medoid_vectors`` containing NaN are absent and never chosen.
    """
    part = part or WorkerPartition.split(X.shape[0], 1)
    pool = pool or WorkerPool(1)
    present = np.all(np.isfinite(medoid_vectors), axis=1)
    if not present.any():
        raise InputError("no medoid to initialise from")
    M = np.where(present[:, None], medoid_vectors, 0.0)
    k_mm = kernel_diag(kernel, M)

    def work(r):
        Kt = kernel_slab(kernel, X, r.start, r.stop, M)
        d = k_mm[None, :] - 2.0 * Kt  # k(x,x) is common to every j
        d[:, ~present] = np.inf
        return np.argmin(d, axis=1).astype(np.int64)

    slices = pool.map(work, part.ranges)
    if comm is None:
        return np.concatenate(slices)
    return comm.allgather(slices, part)


def extract_medoids(gd: GdResult, diag: np.ndarray, batch_index: np.ndarray, part: WorkerPartition,
                    comm: Communicator | None = None) -> np.ndarray:
    """Per cluster, the batch sample minimising k(x,x) - 2 f(x, j), searched
    over the whole batch. Returns global sample indices, ABSENT for clusters
    without landmark members."""
    C = gd.state.C
    vals, idxs = [], []
    for f, r in zip(gd.state.f, part.ranges):
        if len(r) == 0:
            vals.append(np.full(C, np.inf))
            idxs.append(np.full(C, ABSENT, dtype=np.int64))
            continue
        obj = diag[r.start:r.stop, None] - 2.0 * f
        loc = np.argmin(obj, axis=0)
        v = obj[loc, np.arange(C)]
        i = batch_index[r.start + loc].astype(np.int64)
        i[~np.isfinite(v)] = ABSENT
        vals.append(v)
        idxs.append(i)
    if comm is None:
        best, _ = allreduce_argmin(vals, idxs)
    else:
        best, _ = comm.allreduce_argmin(vals, idxs)
    best[gd.state.counts == 0] = ABSENT
    return best


def merge_medoids(gs: GlobalState, batch_medoids: np.ndarray, batch_counts: np.ndarray, data: np.ndarray,
                  batch_index: np.ndarray, kernel: KernelSpec, part: WorkerPartition | None = None,
                  pool: WorkerPool | None = None, comm: Communicator | None = None,
                  keep_previous: bool = False) -> tuple[GlobalState, np.ndarray]:
    """Fold one batch into the global medoids.

    The new global medoid of cluster j is the batch sample closest in feature
    space to ``(1 - a) phi(m_j) + a phi(m_j^i)``. Clusters empty in this batch
    keep their medoid. Returns the new state and the alpha vector.
    """
    C = len(gs.medoids)
    X = data[batch_index]
    part = part or WorkerPartition.split(len(batch_index), 1)
    pool = pool or WorkerPool(1)
    c = np.where(batch_medoids != ABSENT, np.asarray(batch_counts, dtype=np.int64), 0)
    alpha = np.where(c > 0, c / np.maximum(gs.n + c, 1), 0.0)

    if gs.batch_counter == 0:
        out = GlobalState(np.where(c > 0, batch_medoids, ABSENT).astype(np.int64), c.copy(), 1)
        return out, np.where(c > 0, 1.0, 0.0)

    prev_ok = gs.present
    Mprev = np.where(prev_ok[:, None], data[np.where(prev_ok, gs.medoids, 0)], 0.0)
    Mbat = np.where((c > 0)[:, None], data[np.where(c > 0, batch_medoids, 0)], 0.0)
    w_prev = np.where(prev_ok, 1.0 - alpha, 0.0)
    diag = kernel_diag(kernel, X)

    def work(r):
        if len(r) == 0:
            return np.full(C, np.inf), np.full(C, ABSENT, dtype=np.int64)
        Kp = kernel_slab(kernel, X, r.start, r.stop, Mprev)
        Kb = kernel_slab(kernel, X, r.start, r.stop, Mbat)
        obj = diag[r.start:r.stop, None] - 2.0 * w_prev[None, :] * Kp - 2.0 * alpha[None, :] * Kb
        loc = np.argmin(obj, axis=0)
        v = obj[loc, np.arange(C)]
        i = batch_index[r.start + loc].astype(np.int64)
        i[c == 0] = ABSENT
        return v, i

    res = pool.map(work, part.ranges)
    if comm is None:
        best, best_v = allreduce_argmin([x[0] for x in res], [x[1] for x in res])
    else:
        best, best_v = comm.allreduce_argmin([x[0] for x in res], [x[1] for x in res])

    if keep_previous:
        k_pp = kernel_diag(kernel, Mprev)
        k_pb = np.array([kernel_slab(kernel, Mprev, j, j + 1, Mbat[j:j + 1])[0, 0] for j in range(C)])
        v_prev = k_pp - 2.0 * w_prev * k_pp - 2.0 * alpha * k_pb
        better = (c > 0) & prev_ok & ((v_prev < best_v) | ((v_prev == best_v) & (gs.medoids < best)))
        best = np.where(better, gs.medoids, best)

    medoids = np.where(c > 0, best, gs.medoids).astype(np.int64)
    return GlobalState(medoids, gs.n + c, gs.batch_counter + 1), alpha


def predict(data, medoid_vectors: np.ndarray, kernel: KernelSpec, chunk: int = 4096) -> np.ndarray:
    """Nearest-medoid label for every sample (ties to the lowest cluster)."""
    X = np.asarray(getattr(data, "samples", data), dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != medoid_vectors.shape[1]:
        raise InputError(f"samples have shape {X.shape}, medoids have {medoid_vectors.shape[1]} features")
    labels = np.empty(X.shape[0], dtype=np.int64)
    for lo in range(0, X.shape[0], chunk):
        labels[lo:lo + chunk] = init_labels_from_medoids(X[lo:lo + chunk], medoid_vectors, kernel)
    return labels


def _vectors(data: np.ndarray, medoids: np.ndarray) -> np.ndarray:
    out = np.full((len(medoids), data.shape[1]), np.nan)
    ok = medoids != ABSENT
    out[ok] = data[medoids[ok]]
    return out


# ---------------------------------------------------------------------------
# orchestration


def _run_once(X: np.ndarray, cfg: RunConfig, kernel: KernelSpec, restart: int) -> RunResult:
    N = X.shape[0]
    C = cfg.C
    plan = partition(cfg.sampling, N, cfg.B)
    landmarks: Landmarks = sample_landmarks(plan, cfg.s, C, rng_stream(cfg.seed, "landmarks", restart))
    init_rng = rng_stream(cfg.seed, "init", restart)
    comm = Communicator(cfg.P)
    trackers = [MemoryTracker() for _ in range(cfg.P)]
    timings = dict.fromkeys(["fetch", "kernel", "init", "inner", "merge", "final"], 0.0)
    gs = GlobalState.empty(C)
    traces: list[BatchTrace] = []
    seeds = None

    pool = WorkerPool(cfg.P)
    bg = ThreadPoolExecutor(max_workers=1) if cfg.prefetch else None

    def build(i):
        t0 = time.perf_counter()
        idx = plan[i]
        Xb = X[idx]
        part = WorkerPartition.split(len(idx), cfg.P)
        t1 = time.perf_counter()
        land = landmarks[i]
        Y = Xb[land]
        slabs = pool.map(lambda r: kernel_slab(kernel, Xb, r.start, r.stop, Y), part.ranges)
        t2 = time.perf_counter()
        return idx, Xb, part, land, slabs, t1 - t0, t2 - t1

    try:
        pending: Future | None = None
        for i in range(cfg.B):
            if pending is not None:
                built = pending.result()
            else:
                built = build(i)
            pending = bg.submit(build, i + 1) if (bg is not None and i + 1 < cfg.B) else None
            idx, Xb, part, land, slabs, t_fetch, t_kernel = built
            timings["fetch"] += t_fetch
            timings["kernel"] += t_kernel

            t0 = time.perf_counter()
            if i == 0:
                seeds = idx[kernel_kmeanspp_init(Xb, C, kernel, init_rng)]
                M = X[seeds]
            else:
                M = _vectors(X, gs.medoids)
            comm.tag = (i, "init")
            U0 = init_labels_from_medoids(Xb, M, kernel, part, pool, comm)
            comm.tag = None
            diag = kernel_diag(kernel, Xb)
            timings["init"] += time.perf_counter() - t0

            t0 = time.perf_counter()
            gd = inner_gd_loop(slabs, U0, cfg.gd, land, diag[land], C, part, pool, comm, tag=i,
                               record_history=cfg.record_history, trackers=trackers)
            timings["inner"] += time.perf_counter() - t0
            if not gd.converged:
                log.warning("batch %d stopped at max_iters=%d without converging", i, cfg.gd.max_iters)

            t0 = time.perf_counter()
            comm.tag = (i, "medoid")
            bm = extract_medoids(gd, diag, idx, part, comm)
            batch_counts = np.bincount(gd.labels, minlength=C)
            del slabs
            for tr in trackers:
                tr.drop("kernel")
                tr.drop("f")
            prev_vec = _vectors(X, gs.medoids)
            comm.tag = (i, "merge")
            gs, alpha = merge_medoids(gs, bm, batch_counts, X, idx, kernel, part, pool, comm,
                                      cfg.keep_previous_medoid)
            comm.tag = None
            new_vec = _vectors(X, gs.medoids)
            disp = medoid_displacement(prev_vec, new_vec, kernel) if i > 0 else np.full(C, np.nan)
            timings["merge"] += time.perf_counter() - t0

            gcost = None
            if cfg.track_global_cost and gs.present.any():
                lab = predict(X, new_vec, kernel)
                gcost = global_cost(X, new_vec, lab, kernel)
            traces.append(BatchTrace(
                index=i, size=len(idx), n_landmarks=len(land), iterations=gd.iterations,
                converged=gd.converged, cost_trace=gd.cost_trace, counts=batch_counts.tolist(),
                batch_medoids=bm.tolist(), alpha=alpha.tolist(), medoids=gs.medoids.tolist(),
                displacement=disp.tolist(), global_cost=gcost, label_history=gd.history,
            ))
    finally:
        pool.close()
        if bg is not None:
            bg.shutdown()

    t0 = time.perf_counter()
    if not gs.present.all():
        warnings.warn(f"clusters {np.flatnonzero(~gs.present).tolist()} never received a medoid; dropped",
                      RuntimeWarning, stacklevel=3)
    vec = _vectors(X, gs.medoids)
    labels = predict(X, vec, kernel)
    cost = global_cost(X, vec, labels, kernel)
    timings["final"] = time.perf_counter() - t0
    return RunResult(labels=labels, state=gs, medoid_vectors=vec, kernel=kernel, final_cost=cost,
                     traces=traces, comm=comm, timings=timings, peak_memory=[t.peak for t in trackers],
                     restart=restart, initial_medoids=seeds)


def run_clustering(data, cfg: RunConfig) -> RunResult:
    """Cluster every sample of ``data``; with several restarts the run with
    the lowest final cost is returned (the earliest one on ties)."""
    X = np.ascontiguousarray(getattr(data, "samples", data), dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InputError("data must be a non-empty 2-D array")
    if not np.all(np.isfinite(X)):
        raise InputError("data contains non-finite values")
    N = X.shape[0]
    if N < cfg.C:
        raise InputError(f"fewer samples ({N}) than clusters ({cfg.C})")
    if cfg.B > N:
        raise InputError(f"more batches ({cfg.B}) than samples ({N})")
    if N // cfg.B < cfg.C:
        raise InputError(f"B={cfg.B} exceeds N/C={N / cfg.C:.1f}: batches would be smaller than C")
    kernel = cfg.kernel
    if not kernel.resolved:
        kernel = with_auto_sigma(kernel, X, seed=rng_stream(cfg.seed, "d_max"))
        log.info("sigma set to %.6g", kernel.sigma)

    best: RunResult | None = None
    costs = []
    for r in range(cfg.restarts):
        res = _run_once(X, cfg, kernel, r)
        costs.append(res.final_cost)
        if best is None or res.final_cost < best.final_cost:
            best = res
    best.restart_costs = costs
    return best

