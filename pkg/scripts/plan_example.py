"""Smallest batch count whose per-worker kernel footprint fits a memory budget."""

import argparse

from kkm.collectives import ResourceModel, footprint, message_size_bound, plan_min_batches


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-N", "--samples", type=int, default=1000)
    ap.add_argument("-C", "--clusters", type=int, default=2)
    ap.add_argument("-P", "--workers", type=int, default=1)
    ap.add_argument("-Q", "--scalar-bytes", type=int, default=8)
    ap.add_argument("-R", "--memory", type=int, default=80000, help="bytes per worker")
    args = ap.parse_args()

    N, C, P, Q = args.samples, args.clusters, args.workers, args.scalar_bytes
    plan = plan_min_batches(N, C, P, ResourceModel(Q, args.memory))
    B = plan.B_min
    print(f"B_min = {B}  (closed-form estimate {plan.closed_form:.2f})")
    for b in sorted({max(1, B - 1), B, B + 1}):
        print(f"  B={b:<6} footprint {footprint(N, b, P, C, Q):>14,d} bytes  "
              f"message bound {message_size_bound(N, b, P, C, Q):,d} bytes")


if __name__ == "__main__":
    main()
