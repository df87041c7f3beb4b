"""Datasets, label-skew partitioning and IDX ingestion."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, FormatError, PartitionError

__all__ = [
    "Dataset",
    "Partition",
    "PartitionPlan",
    "gen_synthetic_logreg",
    "partition_by_label",
    "load_idx",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConfigurationError("features must be an n x d matrix")
        n = self.features.shape[0]
        if n < 1 or self.labels.shape != (n,):
            raise ConfigurationError("need n >= 1 rows and one label per row")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ConfigurationError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(eq=False)
class Partition:
    owner: int
    indices: np.ndarray
    classes_present: frozenset
    dataset: Dataset = field(repr=False)

    def __len__(self):
        return len(self.indices)

    @cached_property
    def features(self) -> np.ndarray:
        return self.dataset.features[self.indices]

    @cached_property
    def labels(self) -> np.ndarray:
        return self.dataset.labels[self.indices]


@dataclass(frozen=True)
class PartitionPlan:
    """``n_workers`` workers, each holding ``per_worker`` samples drawn from ``p`` classes."""

    n_workers: int
    p: int
    seed: int
    per_worker: int | None = None

    def __post_init__(self):
        if self.n_workers < 1:
            raise ConfigurationError("need at least one worker")
        if self.p < 1:
            raise ConfigurationError("p must be >= 1")
        if self.per_worker is not None and self.per_worker < 1:
            raise ConfigurationError("per_worker must be >= 1")


def _spread_directions(v, iters=500):
    # Thomson-style repulsion; random directions alone can nearly coincide
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    if v.shape[1] == 1:
        return v
    for _ in range(iters):
        diff = v[:, None, :] - v[None, :, :]
        dist = np.linalg.norm(diff, axis=2) + np.eye(len(v))
        force = (diff / dist[..., None] ** 3).sum(axis=1)
        norm = np.linalg.norm(force, axis=1, keepdims=True)
        v = v + 0.05 * force / np.maximum(norm, 1.0)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def gen_synthetic_logreg(n, d, C, separation=1.0, seed=0) -> Dataset:
    """Gaussian blobs with unit covariance, one per class.

    Class means have norm ``separation``; when ``d >= C`` they are mutually
    orthogonal, otherwise they are pushed apart on the sphere.  Labels cycle through all classes before shuffling, so every
    class appears at least ``n // C`` times.
    """
    if n < C:
        raise ConfigurationError(f"n={n} is smaller than the class count C={C}")
    if d < 1 or C < 2:
        raise ConfigurationError("need d >= 1 and C >= 2")
    if separation <= 0:
        raise ConfigurationError("separation must be positive")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((max(d, C), max(d, C)))
    if d >= C:
        q, _ = np.linalg.qr(raw[:d, :C])
        means = q.T
    else:
        means = _spread_directions(raw[:C, :d])
    means = separation * means
    labels = rng.permutation(np.arange(n) % C)
    X = means[labels] + rng.standard_normal((n, d))
    return Dataset(X, labels, C)


def partition_by_label(dataset: Dataset, plan: PartitionPlan, classes=None) -> list[Partition]:
    """Split ``dataset`` into disjoint, equal-size, label-skewed partitions.

    Workers are served in id order.  Each picks ``min(p, C)`` distinct classes
    uniformly among the classes that can still supply its per-class share,
    then draws its share from each without replacement.  Class choices may
    overlap across workers; sample indices never do.

    Passing ``classes`` (one class set per worker, e.g. from a training
    split) pins each worker's classes instead of drawing them; used to give
    every worker a test partition over its own training labels.
    """
    C = dataset.n_classes
    k = min(plan.p, C)
    per_worker = plan.per_worker or len(dataset) // plan.n_workers
    if per_worker < k:
        raise PartitionError(
            f"per-worker count {per_worker} cannot cover {k} classes", worker=0
        )
    rng = np.random.default_rng(plan.seed)
    pools = []
    for c in range(C):
        idx = np.flatnonzero(dataset.labels == c)
        pools.append(list(rng.permutation(idx)))

    if classes is not None and len(classes) != plan.n_workers:
        raise ConfigurationError("need one class set per worker")
    out = []
    for w in range(plan.n_workers):
        if classes is not None:
            chosen = sorted(int(c) for c in classes[w])
        else:
            need = -(-per_worker // k)
            eligible = [c for c in range(C) if len(pools[c]) >= need]
            if len(eligible) < k:
                raise PartitionError(
                    f"worker {w} needs {k} classes with >= {need} unused samples, "
                    f"only {len(eligible)} remain",
                    worker=w,
                )
            chosen = sorted(rng.choice(eligible, size=k, replace=False).tolist())
        base, extra = divmod(per_worker, len(chosen))
        shares = [base + (1 if j < extra else 0) for j in range(len(chosen))]
        for c, share in zip(chosen, shares):
            if len(pools[c]) < share:
                raise PartitionError(
                    f"worker {w}: class {c} has only {len(pools[c])} unused samples",
                    worker=w,
                )
        taken = []
        for c, share in zip(chosen, shares):
            taken.extend(pools[c][:share])
            del pools[c][:share]
        out.append(Partition(w, np.asarray(taken, dtype=np.int64), frozenset(chosen), dataset))
    return out


def _read_header(buf: bytes, path, expected_magic):
    if len(buf) < 8:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise FormatError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(buf) < hdr:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", buf[4:hdr])
    size = int(np.prod(dims))
    if len(buf) - hdr != size:
        raise FormatError(f"{path}: expected {size} data bytes, found {len(buf) - hdr}")
    return dims, np.frombuffer(buf, dtype=np.uint8, offset=hdr)


def load_idx(images_path, labels_path, n_classes=10) -> Dataset:
    """Load an MNIST-style IDX image/label pair; pixels are scaled to [0, 1]."""
    img_buf = Path(images_path).read_bytes()
    lbl_buf = Path(labels_path).read_bytes()
    dims, pixels = _read_header(img_buf, images_path, IDX_IMAGES_MAGIC)
    (count,), labels = _read_header(lbl_buf, labels_path, IDX_LABELS_MAGIC)
    if dims[0] != count:
        raise FormatError(f"{dims[0]} images but {count} labels")
    if count == 0:
        raise FormatError("IDX files contain no items")
    X = pixels.reshape(dims[0], -1).astype(np.float64) / 255.0
    n_classes = max(n_classes, int(labels.max()) + 1)
    return Dataset(X, labels.astype(np.int64), n_classes)
