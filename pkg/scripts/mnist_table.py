"""Cluster MNIST at several batch counts and print accuracy/NMI on the test split.

    KKM_MNIST_DIR=/data/mnist python scripts/mnist_table.py --batches 4 16 64
"""

import argparse
import json

from kkm.experiments import mnist_from_env, score_kkm

TARGET = {1: (86.47, 0.737), 4: (82.63, 0.680), 16: (81.45, 0.670), 64: (78.39, 0.626)}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--batches", type=int, nargs="+", default=[1, 4, 16, 64])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--restarts", type=int, default=5)
    ap.add_argument("--landmarks", type=float, default=1.0, help="landmark fraction s")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", help="write the raw scores here as JSON")
    args = ap.parse_args()

    train, test = mnist_from_env()
    rows = {}
    print(f"{'B':>4} {'accuracy':>16} {'NMI':>14} {'seconds':>9} {'target':>16}")
    for B in args.batches:
        sc = score_kkm(train, test, 10, B, range(args.seeds), s=args.landmarks, restarts=args.restarts,
                       P=args.workers)
        (acc, nm), (acc_sd, nm_sd) = sc.mean(), sc.std()
        ref = TARGET.get(B)
        ref_s = f"{ref[0]:.2f} / {ref[1]:.3f}" if ref else "-"
        print(f"{B:>4} {acc:9.2f} ± {acc_sd:4.2f} {nm:7.3f} ± {nm_sd:.3f} {sum(sc.seconds) / len(sc.seconds):9.1f} "
              f"{ref_s:>16}")
        rows[B] = vars(sc)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
