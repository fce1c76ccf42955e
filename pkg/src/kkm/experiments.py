"""Experiment protocols shared by the acceptance suite and scripts/."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from kkm.baselines import BaselineConfig, assign, sgd_minibatch_kmeans
from kkm.collectives import footprint
from kkm.data import DataSet, generate_toy2d, load_mnist
from kkm.errors import InputError
from kkm.kernels import KernelSpec
from kkm.lifecycle import RunConfig, predict, run_clustering
from kkm.metrics import clustering_accuracy, nmi

MNIST_ENV = "KKM_MNIST_DIR"


def mnist_from_env() -> tuple[DataSet, DataSet]:
    """MNIST train/test from the directory named by ``KKM_MNIST_DIR``."""
    d = os.environ.get(MNIST_ENV)
    if not d:
        raise InputError(f"MNIST not available: set {MNIST_ENV} to a directory with the four IDX files")
    return load_mnist(d)


def physical_memory() -> int:
    try:
        return os.sysconf("SC_PHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return 0


def require_memory(N: int, B: int, P: int, C: int) -> None:
    """Refuse runs whose modelled kernel footprint exceeds physical memory."""
    need = P * footprint(N, B, P, C)
    have = physical_memory()
    if have and need > have:
        raise InputError(f"N={N}, B={B} needs ~{need / 2**30:.1f} GiB for the kernel slabs; "
                         f"this machine has {have / 2**30:.1f} GiB")


@dataclass
class Score:
    accuracy: list[float] = field(default_factory=list)
    nmi: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def mean(self) -> tuple[float, float]:
        return float(np.mean(self.accuracy)), float(np.mean(self.nmi))

    def std(self) -> tuple[float, float]:
        return float(np.std(self.accuracy)), float(np.std(self.nmi))


def score_kkm(train: DataSet, test: DataSet, C: int, B: int, seeds, s: float = 1.0, restarts: int = 5,
              P: int = 1, kernel: KernelSpec | None = None) -> Score:
    """Cluster ``train`` once per seed and score nearest-medoid labels of
    ``test`` against its true classes (accuracy in percent)."""
    require_memory(train.N, B, P, C)
    out = Score()
    for seed in seeds:
        cfg = RunConfig(C=C, B=B, s=s, P=P, seed=seed, restarts=restarts,
                        kernel=kernel or KernelSpec("rbf", backend="blas"))
        t0 = time.perf_counter()
        res = run_clustering(train, cfg)
        out.seconds.append(time.perf_counter() - t0)
        lab = predict(test, res.medoid_vectors, res.kernel)
        out.accuracy.append(100.0 * clustering_accuracy(test.labels, lab))
        out.nmi.append(nmi(test.labels, lab))
    return out


def score_sgd(train: DataSet, test: DataSet, C: int, seeds, batch_size: int = 1000) -> Score:
    out = Score()
    for seed in seeds:
        t0 = time.perf_counter()
        res = sgd_minibatch_kmeans(train, BaselineConfig(C=C, seed=seed, sgd_batch_size=batch_size))
        out.seconds.append(time.perf_counter() - t0)
        lab, _ = assign(test.samples, res.centers)
        out.accuracy.append(100.0 * clustering_accuracy(test.labels, lab))
        out.nmi.append(nmi(test.labels, lab))
    return out


@dataclass
class ToyDiagnostics:
    sampling: str
    accuracy: float
    max_displacement: float
    displacement: list[list[float]]
    iterations: list[int]


def toy_diagnostics(per_cluster: int = 10000, B: int = 3, seed: int = 0, std: float = 0.2,
                    samplings=("stride", "block")) -> dict[str, ToyDiagnostics]:
    """Cluster the cluster-sorted four-Gaussian toy under each sampler and
    record the per-batch medoid displacement."""
    ds = generate_toy2d(per_cluster, seed=seed, std=std)
    out = {}
    for sampling in samplings:
        res = run_clustering(ds, RunConfig(C=4, B=B, sampling=sampling, seed=seed))
        disp = [t.displacement for t in res.traces[1:]]
        out[sampling] = ToyDiagnostics(
            sampling=sampling,
            accuracy=clustering_accuracy(ds.labels, res.labels),
            max_displacement=float(np.nanmax(disp)) if disp else 0.0,
            displacement=disp,
            iterations=[t.iterations for t in res.traces],
        )
    return out
