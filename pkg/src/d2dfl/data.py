"""Datasets: synthetic generator, file loaders and the non-iid partition."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._seeding import derive_rng
from .errors import ConfigError


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ConfigError("feature and label counts differ")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.unique(self.y)


@dataclass(frozen=True, eq=False)
class LocalDataset:
    """One device's data.

    ``cluster_of`` gives each point's cluster id and ``offloadable`` is False
    for points that arrived by offloading or were already sent once.
    """

    X: np.ndarray
    y: np.ndarray
    cluster_of: np.ndarray
    offloadable: np.ndarray

    @classmethod
    def from_arrays(cls, X, y, cluster_of=None) -> "LocalDataset":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(0, 0)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        n = len(y)
        cl = np.zeros(n, dtype=np.int64) if cluster_of is None else np.asarray(cluster_of, dtype=np.int64)
        return cls(X, y, cl, np.ones(n, dtype=bool))

    def __len__(self) -> int:
        return len(self.y)

    @property
    def size(self) -> int:
        return len(self.y)

    def with_clusters(self, cluster_of) -> "LocalDataset":
        return replace(self, cluster_of=np.asarray(cluster_of, dtype=np.int64))

    def cluster_counts(self, k: int) -> np.ndarray:
        return np.bincount(self.cluster_of, minlength=k)[:k] if k else np.zeros(0, dtype=np.int64)

    def eligible_counts(self, k: int) -> np.ndarray:
        return np.bincount(self.cluster_of[self.offloadable], minlength=k)[:k]


def normalize_unit(X: np.ndarray) -> np.ndarray:
    """Min-max scale each column to [0, 1]; constant columns map to 0."""
    X = np.asarray(X, dtype=np.float64)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (X - lo) / span


def make_blobs(n_classes: int = 10, n_per_class: int = 200, dim: int = 8,
               spread: float = 1.0, separation: float = 3.0, seed: int = 0) -> LabeledDataset:
    """Gaussian class blobs with features scaled to [0, 1].

    Class means are drawn uniformly in a cube of side ``separation``; each
    blob has isotropic standard deviation ``spread``, so small separations
    give overlapping, non-separable classes.
    """
    rng = derive_rng(seed, "blobs")
    means = rng.uniform(0.0, separation, size=(n_classes, dim))
    X = np.concatenate([means[c] + spread * rng.standard_normal((n_per_class, dim))
                        for c in range(n_classes)])
    y = np.repeat(np.arange(n_classes), n_per_class)
    return LabeledDataset(normalize_unit(X), y)


def train_test_split(data: LabeledDataset, test_fraction: float, seed: int):
    perm = derive_rng(seed, "split").permutation(len(data))
    n_test = int(round(test_fraction * len(data)))
    te, tr = perm[:n_test], perm[n_test:]
    return LabeledDataset(data.X[tr], data.y[tr]), LabeledDataset(data.X[te], data.y[te])


def load_dataset(path) -> LabeledDataset:
    """Read ``.npz`` (arrays ``X`` and ``y``) or ``.csv`` (label in last column)."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            return LabeledDataset(z["X"], z["y"])
    if path.suffix == ".csv":
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
        return LabeledDataset(arr[:, :-1], arr[:, -1].astype(np.int64))
    raise ConfigError(f"unsupported dataset format: {path.suffix}")


def save_dataset(data: LabeledDataset, path) -> None:
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, X=data.X, y=data.y)
    elif path.suffix == ".csv":
        np.savetxt(path, np.column_stack([data.X, data.y]), delimiter=",", fmt="%.17g")
    else:
        raise ConfigError(f"unsupported dataset format: {path.suffix}")


@dataclass(frozen=True)
class PartitionConfig:
    """Non-iid split: each device draws ``labels_per_device`` labels and a
    size from a normal with mean ``mean_size`` and variance ``0.2 * mean_size``."""

    labels_per_device: int = 3
    mean_size: float = 100.0
    variance_factor: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.labels_per_device < 1:
            raise ConfigError("labels_per_device must be >= 1")
        if not self.mean_size > 0:
            raise ConfigError("mean_size must be > 0")
        if self.variance_factor < 0:
            raise ConfigError("variance_factor must be >= 0")


def partition_dataset(full: LabeledDataset, n: int, cfg: PartitionConfig) -> list[LocalDataset]:
    labels = full.labels
    if len(labels) < cfg.labels_per_device:
        raise ConfigError(
            f"dataset has {len(labels)} labels, fewer than labels_per_device={cfg.labels_per_device}")
    rng = derive_rng(cfg.seed, "partition")
    std = math.sqrt(cfg.variance_factor * cfg.mean_size)
    by_label = {int(c): np.flatnonzero(full.y == c) for c in labels}
    out = []
    for _ in range(n):
        chosen = rng.choice(labels, size=cfg.labels_per_device, replace=False)
        size = max(1, int(round(rng.normal(cfg.mean_size, std))))
        pool = np.concatenate([by_label[int(c)] for c in np.sort(chosen)])
        idx = pool[rng.integers(0, len(pool), size)]
        out.append(LocalDataset.from_arrays(full.X[idx], full.y[idx]))
    return out
