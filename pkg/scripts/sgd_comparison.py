"""Kernel k-means against SGD mini-batch k-means on MNIST over paired seeds.

    KKM_MNIST_DIR=/data/mnist python scripts/sgd_comparison.py
"""

import argparse

from kkm.experiments import mnist_from_env, score_kkm, score_sgd


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--batches", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--sgd-batch-size", type=int, default=1000)
    args = ap.parse_args()

    train, test = mnist_from_env()
    seeds = range(args.seeds)
    sgd = score_sgd(train, test, 10, seeds, batch_size=args.sgd_batch_size)
    print(f"{'method':>10} {'mean acc':>9} {'std':>6}")
    print(f"{'sgd':>10} {sgd.mean()[0]:9.2f} {sgd.std()[0]:6.2f}")
    for B in args.batches:
        sc = score_kkm(train, test, 10, B, seeds)
        print(f"{'kkm B=' + str(B):>10} {sc.mean()[0]:9.2f} {sc.std()[0]:6.2f}")


if __name__ == "__main__":
    main()
