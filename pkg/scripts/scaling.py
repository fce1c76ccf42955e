"""Inner-loop time and output identity across worker counts.

Uses MNIST when KKM_MNIST_DIR is set, otherwise a synthetic mixture.
"""

import argparse
import hashlib

import numpy as np

from kkm.errors import InputError
from kkm.experiments import mnist_from_env
from kkm.kernels import KernelSpec
from kkm.lifecycle import RunConfig, run_clustering


def digest(res) -> str:
    return hashlib.sha256(res.labels.tobytes() + res.medoids.tobytes()).hexdigest()[:16]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workers", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--batches", type=int, default=4)
    ap.add_argument("--samples", type=int, default=8000, help="size of the synthetic fallback")
    ap.add_argument("--clusters", type=int, default=10)
    args = ap.parse_args()

    try:
        X = mnist_from_env()[0]
        source = "MNIST train"
    except InputError:
        rng = np.random.default_rng(0)
        centers = rng.normal(0, 3, size=(args.clusters, 20))
        X = centers[rng.integers(0, args.clusters, args.samples)] + rng.normal(size=(args.samples, 20))
        source = f"synthetic {args.samples} x 20"
    print(f"data: {source}, B={args.batches}, C={args.clusters}")
    base = None
    for P in args.workers:
        res = run_clustering(X, RunConfig(C=args.clusters, B=args.batches, P=P, seed=0,
                                          kernel=KernelSpec("rbf", backend="blas")))
        t = res.timings["inner"]
        base = base or t
        print(f"P={P:<2} inner {t:8.2f}s  ratio {t / base:5.2f}  outputs {digest(res)}")


if __name__ == "__main__":
    main()
