"""Command line entry point (``kkm``)."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from kkm import __version__
from kkm.baselines import BaselineConfig, assign, lloyd_kmeans, sgd_minibatch_kmeans
from kkm.collectives import ResourceModel, message_size_bound, plan_min_batches
from kkm.data import (DataSet, generate_noisy_mnist, generate_toy2d, load_any, load_idx, read_labels,
                      save_csv, save_npz, write_labels)
from kkm.engine import GdConfig
from kkm.errors import InputError, KkmError
from kkm.kernels import KernelSpec, with_auto_sigma
from kkm.lifecycle import RunConfig, RunResult, predict, rng_stream, run_clustering
from kkm.metrics import EvaluationReport, clustering_accuracy, elbow_select, nmi

log = logging.getLogger("kkm")

WORKERS_ENV = "KKM_WORKERS"


def _memory(text: str) -> int:
    units = {"K": 2**10, "M": 2**20, "G": 2**30, "T": 2**40}
    t = text.strip().upper().rstrip("B")
    if t and t[-1] in units:
        return int(float(t[:-1]) * units[t[-1]])
    return int(float(t))


def _c_range(text: str) -> list[int]:
    try:
        a, b = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected a:b") from None
    if a < 1 or b < a:
        raise argparse.ArgumentTypeError("expected 1 <= a <= b")
    return list(range(a, b + 1))


def _add_input(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--input", required=required, help="data file (csv, npz, libsvm, idx)")
    p.add_argument("--format", default="auto", choices=["auto", "csv", "npz", "libsvm", "idx"])
    p.add_argument("--input-labels", help="IDX label file paired with --input")
    p.add_argument("--has-labels", action="store_true", help="csv: last column is the class id")
    p.add_argument("--dim", type=int, help="libsvm feature dimension")


def _add_run(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batches", "-B", type=int, default=1)
    p.add_argument("--sparsity", "-s", type=float, default=1.0)
    p.add_argument("--workers", "-P", type=int, default=1)
    p.add_argument("--kernel", choices=["rbf", "linear"], default="rbf")
    p.add_argument("--sigma", default="auto", help="'auto' (factor * d_max) or a positive number")
    p.add_argument("--sigma-factor", type=float, default=4.0)
    p.add_argument("--backend", choices=["pairwise", "blas"], default="pairwise")
    p.add_argument("--sampling", choices=["stride", "block"], default="stride")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--prefetch", action="store_true")
    p.add_argument("--keep-previous-medoid", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kkm", description="mini-batch kernel k-means")
    ap.add_argument("--version", action="version", version=f"kkm {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="cluster a dataset")
    _add_input(p)
    p.add_argument("--clusters", "-C", type=int, required=True)
    _add_run(p)
    p.add_argument("--eval-input", help="held-out set labelled by nearest medoid")
    p.add_argument("--eval-labels", help="IDX label file paired with --eval-input")
    p.add_argument("--trace-comm", action="store_true", help="write comm.json traffic report")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score a label file against the truth")
    p.add_argument("--labels", required=True)
    p.add_argument("--truth", required=True)

    p = sub.add_parser("plan", help="smallest batch count fitting a memory budget")
    p.add_argument("--samples", "-N", type=int, required=True)
    p.add_argument("--clusters", "-C", type=int, required=True)
    p.add_argument("--workers", "-P", type=int, default=1)
    p.add_argument("--scalar-bytes", "-Q", type=int, default=8, choices=[4, 8])
    p.add_argument("--memory", "-R", type=_memory, required=True, help="bytes per worker, e.g. 4G")

    p = sub.add_parser("elbow", help="scan cluster counts and pick the knee")
    _add_input(p)
    p.add_argument("--c-range", type=_c_range, required=True, help="a:b inclusive")
    _add_run(p)
    p.add_argument("--out")

    p = sub.add_parser("baseline", help="input-space k-means baselines")
    _add_input(p)
    p.add_argument("--method", choices=["lloyd", "sgd"], required=True)
    p.add_argument("--clusters", "-C", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--iterations", type=int)
    p.add_argument("--eval-input")
    p.add_argument("--eval-labels")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-toy", help="four-Gaussian 2-D toy set (csv or npz)")
    p.add_argument("--per-cluster", type=int, default=10000)
    p.add_argument("--std", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-noisy", help="noisy replicas of an IDX image set (npz)")
    p.add_argument("--images", required=True)
    p.add_argument("--labels")
    p.add_argument("--copies", type=int, default=20)
    p.add_argument("--noise-fraction", type=float, default=0.2)
    p.add_argument("--mode", choices=["add", "replace"], default="add")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return ap


# ---------------------------------------------------------------------------


def _load(args) -> DataSet:
    return load_any(args.input, args.format, args.input_labels, args.has_labels, args.dim)


def _workers(args) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    return args.workers


def _run_config(args, C: int) -> RunConfig:
    if args.sigma == "auto":
        sigma = None
    else:
        try:
            sigma = float(args.sigma)
        except ValueError:
            raise InputError(f"--sigma must be 'auto' or a number, got {args.sigma!r}") from None
    kernel = KernelSpec(kind=args.kernel, sigma=sigma, backend=args.backend)
    return RunConfig(C=C, B=args.batches, s=args.sparsity, P=_workers(args), kernel=kernel,
                     sampling=args.sampling, seed=args.seed, restarts=args.restarts,
                     gd=GdConfig(max_iters=args.max_iters), prefetch=args.prefetch,
                     keep_previous_medoid=args.keep_previous_medoid)


def _sigma_factor(args, data: DataSet, cfg: RunConfig) -> RunConfig:
    if cfg.kernel.kind == "rbf" and cfg.kernel.sigma is None and args.sigma_factor != 4.0:
        k = with_auto_sigma(cfg.kernel, data.samples, rng_stream(cfg.seed, "d_max"), args.sigma_factor)
        return replace(cfg, kernel=k)
    return cfg


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")


def _metrics(truth, labels) -> dict:
    return {"accuracy": clustering_accuracy(truth, labels), "nmi": nmi(truth, labels)}


def write_run(out: Path, data: DataSet, cfg: RunConfig, res: RunResult, extra: dict | None = None,
              trace_comm: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    write_labels(out / "labels.csv", res.labels)
    with open(out / "medoids.csv", "w") as fh:
        fh.write("cluster,global_sample_index\n")
        for j, m in enumerate(res.medoids):
            fh.write(f"{j},{int(m)}\n")
    with open(out / "cost_trace.csv", "w") as fh:
        fh.write("batch,iteration,cost\n")
        for tr in res.traces:
            for t, c in enumerate(tr.cost_trace):
                fh.write(f"{tr.index},{t},{c!r}\n")
    _write_json(out / "traces.json", [tr.to_dict() for tr in res.traces])
    metrics = {"final_cost": res.final_cost, "restart": res.restart, "restart_costs": res.restart_costs,
               "sigma": res.kernel.sigma, "peak_tracked_bytes": res.peak_memory}
    if data.labels is not None:
        metrics["train"] = _metrics(data.labels, res.labels)
    if extra:
        metrics.update(extra)
    _write_json(out / "metrics.json", metrics)
    if trace_comm:
        _write_json(out / "comm.json", res.comm.report())
    manifest = {
        "software": {"kkm": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "config": cfg.to_dict(),
        "resolved_kernel": res.kernel.to_dict(),
        "dataset": {"fingerprint": data.fingerprint(), "N": data.N, "d": data.d, "provenance": data.provenance},
        "seeds": {"seed": cfg.seed, "restarts": cfg.restarts, "streams": ["d_max", "landmarks", "init"]},
        "timings": res.timings,
        "outputs": {name: _sha(out / name) for name in ("labels.csv", "medoids.csv")},
    }
    _write_json(out / "manifest.json", manifest)
    return metrics


def cmd_cluster(args) -> int:
    data = _load(args)
    cfg = _sigma_factor(args, data, _run_config(args, args.clusters))
    t0 = time.perf_counter()
    res = run_clustering(data, cfg)
    log.info("clustered %d samples in %.2fs", data.N, time.perf_counter() - t0)
    extra = {}
    out = Path(args.out)
    if args.eval_input:
        ev = load_any(args.eval_input, args.format, args.eval_labels, args.has_labels, args.dim)
        ev_labels = predict(ev, res.medoid_vectors, res.kernel)
        out.mkdir(parents=True, exist_ok=True)
        write_labels(out / "eval_labels.csv", ev_labels)
        if ev.labels is not None:
            extra["eval"] = _metrics(ev.labels, ev_labels)
    metrics = write_run(out, data, cfg, res, extra, args.trace_comm)
    print(json.dumps(metrics, default=_json_default))
    return 0


def cmd_evaluate(args) -> int:
    pred = read_labels(args.labels)
    truth = read_labels(args.truth)
    rep = EvaluationReport(accuracy=clustering_accuracy(truth, pred), nmi=nmi(truth, pred))
    print(json.dumps(rep.to_dict()))
    return 0


def cmd_plan(args) -> int:
    model = ResourceModel(Q=args.scalar_bytes, R=args.memory)
    plan = plan_min_batches(args.samples, args.clusters, args.workers, model)
    print(f"B_min (scan)        : {plan.B_min}")
    print(f"B_min (closed form) : {plan.closed_form:.4f}")
    print(f"footprint(B_min)    : {plan.footprint} bytes of {model.R}")
    print(f"message bound       : {message_size_bound(args.samples, plan.B_min, args.workers, args.clusters, model)} bytes/iteration")
    print("B\tfootprint")
    for b, fp in plan.table:
        print(f"{b}\t{fp}")
    return 0


def cmd_elbow(args) -> int:
    data = _load(args)
    costs = {}
    for C in args.c_range:
        cfg = _sigma_factor(args, data, _run_config(args, C))
        costs[C] = run_clustering(data, cfg).final_cost
        print(f"{C}\t{costs[C]!r}")
    chosen = elbow_select(costs)
    print(f"selected C = {chosen}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "elbow.json", {"costs": costs, "selected": chosen})
    return 0


def cmd_baseline(args) -> int:
    data = _load(args)
    cfg = BaselineConfig(C=args.clusters, seed=args.seed, max_iters=args.max_iters,
                         sgd_batch_size=args.batch_size, sgd_iterations=args.iterations)
    res = lloyd_kmeans(data, cfg) if args.method == "lloyd" else sgd_minibatch_kmeans(data, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_labels(out / "labels.csv", res.labels)
    np.savetxt(out / "centers.csv", res.centers, delimiter=",")
    metrics = {"method": args.method, "final_cost": res.cost, "iterations": res.iterations}
    if data.labels is not None:
        metrics["train"] = _metrics(data.labels, res.labels)
    if args.eval_input:
        ev = load_any(args.eval_input, args.format, args.eval_labels, args.has_labels, args.dim)
        if ev.d != data.d:
            raise InputError(f"evaluation set has {ev.d} features, training set {data.d}")
        ev_labels, _ = assign(ev.samples, res.centers)
        write_labels(out / "eval_labels.csv", ev_labels)
        if ev.labels is not None:
            metrics["eval"] = _metrics(ev.labels, ev_labels)
    _write_json(out / "metrics.json", metrics)
    print(json.dumps(metrics, default=_json_default))
    return 0


def cmd_gen_toy(args) -> int:
    ds = generate_toy2d(args.per_cluster, args.seed, args.std)
    if args.out.endswith(".npz"):
        save_npz(args.out, ds, dtype=np.float64)
    else:
        save_csv(args.out, ds)
    return 0


def cmd_gen_noisy(args) -> int:
    base = load_idx(args.images, args.labels)
    ds = generate_noisy_mnist(base, args.copies, args.noise_fraction, args.seed, args.mode)
    save_npz(args.out, ds)
    return 0


COMMANDS = {
    "cluster": cmd_cluster,
    "evaluate": cmd_evaluate,
    "plan": cmd_plan,
    "elbow": cmd_elbow,
    "baseline": cmd_baseline,
    "gen-toy": cmd_gen_toy,
    "gen-noisy": cmd_gen_noisy,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except KkmError as exc:
        print(f"kkm: error: {exc}", file=sys.stderr)
        if getattr(exc, "min_footprint", None) is not None:
            print(f"kkm: minimal achievable footprint: {exc.min_footprint} bytes", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
