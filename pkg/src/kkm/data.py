"""Datasets: loaders, writers and synthetic generators."""

from __future__ import annotations

import csv
import gzip
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kkm.errors import FormatError, InputError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801

TOY_CENTERS = np.array([[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])


@dataclass
class DataSet:
    samples: np.ndarray
    labels: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1 or self.samples.shape[1] < 1:
            raise InputError(f"samples must be N x d with N, d >= 1; got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("samples contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
            if len(self.labels) != self.N:
                raise InputError(f"{len(self.labels)} labels for {self.N} samples")

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.samples.shape, dtype=np.int64).tobytes())
        h.update(self.samples.tobytes())
        if self.labels is not None:
            h.update(self.labels.tobytes())
        return h.hexdigest()


def _open(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _idx_header(raw: bytes, expected_magic: int, path) -> tuple[list[int], int]:
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at byte offset 0 (expected 0x{expected_magic:08x})")
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise FormatError(f"{path}: truncated dimension header at byte offset {len(raw)}")
    dims = list(struct.unpack(f">{ndim}I", raw[4:end]))
    need = end + int(np.prod(dims))
    if len(raw) < need:
        raise FormatError(f"{path}: truncated payload, file ends at byte offset {len(raw)} but {need} bytes expected")
    return dims, end


def load_idx(images_path, labels_path=None) -> DataSet:
    """MNIST-style IDX files (optionally gzipped); pixels scaled to [0, 1]."""
    raw = _open(images_path)
    dims, off = _idx_header(raw, IDX_IMAGES, images_path)
    n = dims[0]
    d = int(np.prod(dims[1:]))
    pix = np.frombuffer(raw, dtype=np.uint8, count=n * d, offset=off).reshape(n, d)
    labels = None
    if labels_path is not None:
        lraw = _open(labels_path)
        ldims, loff = _idx_header(lraw, IDX_LABELS, labels_path)
        if ldims[0] != n:
            raise FormatError(f"{labels_path}: {ldims[0]} labels for {n} images (count at byte offset 4)")
        labels = np.frombuffer(lraw, dtype=np.uint8, count=n, offset=loff).astype(np.int64)
    if n == 0:
        raise FormatError(f"{images_path}: no images")
    return DataSet(pix / 255.0, labels, {"source": str(images_path), "format": "idx", "notes": "pixels / 255"})


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_mnist(directory) -> tuple[DataSet, DataSet]:
    """(train, test) from a directory holding the four standard IDX files,
    plain or ``.gz``."""
    root = Path(directory)

    def find(name):
        for cand in (root / name, root / f"{name}.gz", root / name.replace("-idx", ".idx")):
            if cand.exists():
                return cand
        raise InputError(f"{name} not found in {root}")

    return tuple(load_idx(find(i), find(l)) for i, l in (MNIST_FILES["train"], MNIST_FILES["test"]))


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (3-D images or 1-D labels)."""
    a = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | a.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def load_csv(path, has_labels: bool = False) -> DataSet:
    """Comma separated numeric rows; with ``has_labels`` the last column is an
    integer class id. Lines starting with ``#`` are skipped."""
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(x) for x in rec]
            except ValueError as exc:
                if lineno == 1:  # header line
                    continue
                raise FormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} fields, found {len(vals)}")
            if has_labels:
                if len(vals) < 2:
                    raise FormatError(f"{path}:{lineno}: need at least one feature and a label")
                labels.append(int(vals[-1]))
                vals = vals[:-1]
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return DataSet(np.array(rows), np.array(labels) if has_labels else None,
                   {"source": str(path), "format": "csv"})


def save_csv(path, data: DataSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for i, row in enumerate(data.samples):
            vals = [repr(float(v)) for v in row]
            if data.labels is not None:
                vals.append(str(int(data.labels[i])))
            w.writerow(vals)


def load_libsvm(path, dim: int) -> DataSet:
    """``label idx:value ...`` rows with 1-based feature indices, densified."""
    rows, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            row = np.zeros(dim)
            try:
                labels.append(int(float(parts[0])))
                for tok in parts[1:]:
                    k, v = tok.split(":")
                    k = int(k)
                    if not 1 <= k <= dim:
                        raise FormatError(f"{path}:{lineno}: feature index {k} outside 1..{dim}")
                    row[k - 1] = float(v)
            except FormatError:
                raise
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed entry") from None
            rows.append(row)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return DataSet(np.array(rows), np.array(labels), {"source": str(path), "format": "libsvm"})


def load_npz(path) -> DataSet:
    with np.load(path) as z:
        if "samples" not in z:
            raise FormatError(f"{path}: missing 'samples' array")
        labels = z["labels"] if "labels" in z else None
        return DataSet(z["samples"], labels, {"source": str(path), "format": "npz"})


def save_npz(path, data: DataSet, dtype=np.float32) -> None:
    arrays = {"samples": data.samples.astype(dtype)}
    if data.labels is not None:
        arrays["labels"] = data.labels
    np.savez_compressed(path, **arrays)


def load_any(path, fmt: str = "auto", labels_path=None, has_labels: bool = False, dim: int | None = None) -> DataSet:
    p = str(path)
    if not Path(p).exists():
        raise InputError(f"no such file: {p}")
    if fmt == "auto":
        if p.endswith((".csv", ".txt")):
            fmt = "csv"
        elif p.endswith(".npz"):
            fmt = "npz"
        elif p.endswith((".svm", ".libsvm")):
            fmt = "libsvm"
        elif "idx" in Path(p).name or "ubyte" in Path(p).name:
            fmt = "idx"
        else:
            raise InputError(f"cannot infer the format of {p}; pass --format")
    if fmt == "csv":
        return load_csv(path, has_labels)
    if fmt == "npz":
        return load_npz(path)
    if fmt == "libsvm":
        if dim is None:
            raise InputError("libsvm input needs --dim")
        return load_libsvm(path, dim)
    if fmt == "idx":
        return load_idx(path, labels_path)
    raise InputError(f"unknown format {fmt!r}")


def generate_toy2d(per_cluster_n: int, seed: int = 0, std: float = 0.2) -> DataSet:
    """Four isotropic Gaussians centred on the corners of [0.25, 0.75]^2,
    emitted sorted by cluster."""
    if per_cluster_n < 1:
        raise InputError("per_cluster_n must be >= 1")
    rng = np.random.default_rng(seed)
    X = np.concatenate([c + std * rng.standard_normal((per_cluster_n, 2)) for c in TOY_CENTERS])
    y = np.repeat(np.arange(4), per_cluster_n)
    return DataSet(X, y, {"source": "toy2d", "format": "generated",
                          "notes": f"per_cluster_n={per_cluster_n} std={std} seed={seed}"})


def generate_noisy_mnist(base: DataSet, copies: int = 20, noise_fraction: float = 0.2, seed: int = 0,
                         mode: str = "add", amplitude: float = 0.5) -> DataSet:
    """Replicate every sample ``copies`` times and perturb floor(fraction * d)
    randomly chosen features of each replica.

    ``mode="add"`` adds U(-amplitude, amplitude) and clamps to [0, 1];
    ``mode="replace"`` overwrites the feature with U(0, 1).
    """
    if copies < 1 or not (0 <= noise_fraction <= 1):
        raise InputError("copies must be >= 1 and noise_fraction in [0, 1]")
    if mode not in ("add", "replace"):
        raise InputError(f"unknown noise mode {mode!r}")
    rng = np.random.default_rng(seed)
    X = np.repeat(base.samples, copies, axis=0)
    n, d = X.shape
    k = int(np.floor(noise_fraction * d))
    for lo in range(0, n if k else 0, 8192):
        blk = X[lo:lo + 8192]
        m = blk.shape[0]
        # k distinct columns per row: the first k of a random permutation
        cols = np.argsort(rng.random((m, d)), axis=1)[:, :k]
        rows = np.arange(m)[:, None]
        if mode == "add":
            blk[rows, cols] = np.clip(blk[rows, cols] + rng.uniform(-amplitude, amplitude, (m, k)), 0.0, 1.0)
        else:
            blk[rows, cols] = rng.random((m, k))
    labels = None if base.labels is None else np.repeat(base.labels, copies)
    prov = dict(base.provenance)
    prov["notes"] = (prov.get("notes", "") + f"; noisy x{copies} frac={noise_fraction} mode={mode} seed={seed}").lstrip("; ")
    return DataSet(X, labels, prov)


def write_labels(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "label"])
        for i, lab in enumerate(np.asarray(labels)):
            w.writerow([i, int(lab)])


def read_labels(path) -> np.ndarray:
    """Read a ``sample_index,label`` CSV back into a label vector."""
    pairs = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or (lineno == 1 and not rec[0].strip().lstrip("-").isdigit()):
                continue
            try:
                pairs.append((int(rec[0]), int(rec[1])))
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: expected sample_index,label") from None
    if not pairs:
        raise InputError(f"{path}: no labels")
    idx = np.array([p[0] for p in pairs])
    if sorted(idx.tolist()) != list(range(len(idx))):
        raise FormatError(f"{path}: sample indices are not a permutation of 0..{len(idx) - 1}")
    out = np.empty(len(idx), dtype=np.int64)
    out[idx] = [p[1] for p in pairs]
    return out
