"""Local training, weighted aggregation and data movement between devices."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import LocalDataset
from .errors import AggregationError, ConfigError, ConstraintViolationError, EmptyDatasetWarning


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.01
    tau: int = 5
    total_iters: int = 50
    model: str = "logistic"
    hidden: int = 32

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError("eta must be > 0")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if self.total_iters < 1 or self.total_iters % self.tau:
            raise ConfigError("total_iters must be a positive multiple of tau")
        if self.model not in ("logistic", "mlp"):
            raise ConfigError(f"unknown model {self.model!r}")

    @property
    def n_aggregations(self) -> int:
        return self.total_iters // self.tau


def local_update(model, w, data: LocalDataset, eta: float) -> np.ndarray:
    """One full-batch gradient step on the device's mean loss.

    A device without data keeps its parameters and emits a warning.
    """
    w = np.asarray(w, dtype=np.float64)
    if len(data) == 0:
        warnings.warn("device has no data; local update skipped", EmptyDatasetWarning, stacklevel=2)
        return w.copy()
    return w - eta * model.grad(w, data.X, data.y)


def aggregate(models: Iterable[tuple[np.ndarray, float]]) -> np.ndarray:
    """Average of ``w_i`` weighted by ``Δ_i``."""
    pairs = [(np.asarray(w, dtype=np.float64), float(d)) for w, d in models]
    total = sum(d for _, d in pairs)
    if not pairs or total <= 0:
        raise AggregationError("aggregation needs at least one positive weight")
    out = np.zeros_like(pairs[0][0])
    for w, d in pairs:
        if d:
            out += d * w
    return out / total


def aggregate_masked(models: Sequence[tuple[np.ndarray, float, np.ndarray]], fallback) -> np.ndarray:
    """Coordinate-wise weighted average over the devices that sent each entry.

    ``mask[j]`` is True when entry j was transmitted. Entries nobody sent keep
    the value from ``fallback`` (the previous global model).
    """
    if not models or sum(d for _, d, _ in models) <= 0:
        raise AggregationError("aggregation needs at least one positive weight")
    fallback = np.asarray(fallback, dtype=np.float64)
    num = np.zeros_like(fallback)
    den = np.zeros_like(fallback)
    for w, d, mask in models:
        m = np.asarray(mask, dtype=bool)
        num[m] += d * np.asarray(w)[m]
        den[m] += d
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), fallback)


def global_loss(model, w, datasets: Sequence[LocalDataset]) -> float:
    """Data-weighted mean of the device losses (the mean over the pooled points)."""
    nonempty = [d for d in datasets if len(d)]
    if not nonempty:
        raise ConfigError("global loss needs at least one datapoint")
    return float(model.loss(w, np.concatenate([d.X for d in nonempty]),
                            np.concatenate([d.y for d in nonempty])))


def weighted_gradient(model, w, datasets: Sequence[LocalDataset]) -> np.ndarray:
    """Data-weighted mean of the device gradients at ``w``."""
    sizes = np.array([len(d) for d in datasets], dtype=np.float64)
    if sizes.sum() == 0:
        return np.zeros(model.n_params)
    g = np.zeros(model.n_params)
    for s, d in zip(sizes, datasets):
        if s:
            g += s * model.grad(w, d.X, d.y)
    return g / sizes.sum()


def train_centralized_reference(model, w_start, datasets: Sequence[LocalDataset], eta: float,
                                steps: int) -> list[np.ndarray]:
    """Gradient descent on the global loss; returns ``steps + 1`` iterates."""
    traj = [np.asarray(w_start, dtype=np.float64).copy()]
    for _ in range(steps):
        traj.append(traj[-1] - eta * weighted_gradient(model, traj[-1], datasets))
    return traj


def execute_offload_transfer(src: LocalDataset, dst: LocalDataset,
                             ratios: Mapping[tuple[int, int], float],
                             rng: np.random.Generator,
                             base_counts: Mapping[int, int] | None = None):
    """Copy ``floor(ratio * D_k^b)`` offloadable points of cluster b to cluster c at dst.

    ``D_k^b`` is the number of offloadable points of cluster b, taken from
    ``base_counts`` when given (so several links in one step share the same
    base). Sent points become non-offloadable at the source and arrive
    non-offloadable at the destination. The count is capped by what is still
    eligible. Returns ``(src', dst', moved)`` with ``moved[(b, c)]`` counts.
    """
    for (b, c), r in ratios.items():
        if not (0.0 <= r <= 1.0) or math.isnan(r):
            raise ConstraintViolationError(f"ratio {r} for clusters {b}->{c} outside [0, 1]")
    offloadable = src.offloadable.copy()
    moved: dict[tuple[int, int], int] = {}
    take_idx, take_cluster = [], []
    for (b, c) in sorted(ratios):
        r = ratios[(b, c)]
        eligible = np.flatnonzero(offloadable & (src.cluster_of == b))
        base = len(eligible) if base_counts is None else int(base_counts.get(b, 0))
        count = min(int(math.floor(r * base + 1e-9)), len(eligible))
        if count <= 0:
            moved[(b, c)] = 0
            continue
        chosen = np.sort(rng.choice(eligible, size=count, replace=False))
        offloadable[chosen] = False
        take_idx.append(chosen)
        take_cluster.append(np.full(count, c, dtype=np.int64))
        moved[(b, c)] = count
    if not take_idx:
        return replace(src, offloadable=offloadable), dst, moved
    idx = np.concatenate(take_idx)
    Xd = src.X[idx] if len(dst) == 0 else np.vstack([dst.X, src.X[idx]])
    new_dst = LocalDataset(
        X=Xd,
        y=np.concatenate([dst.y, src.y[idx]]),
        cluster_of=np.concatenate([dst.cluster_of] + take_cluster),
        offloadable=np.concatenate([dst.offloadable, np.zeros(len(idx), dtype=bool)]),
    )
    return replace(src, offloadable=offloadable), new_dst, moved


def feddrop_mask(layout, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform dropout over the fully-connected entries; True marks a sent entry.

    Exactly ``round(rate * FC)`` entries are dropped.
    """
    if not layout.supports_dropout:
        raise ConfigError("dropout applies only to models with fully-connected layers")
    if not 0.0 <= rate < 1.0:
        raise ConfigError("dropout rate must lie in [0, 1)")
    fc_idx = np.flatnonzero(layout.fc_mask())
    mask = np.ones(layout.total, dtype=bool)
    mask[rng.choice(fc_idx, size=int(round(rate * len(fc_idx))), replace=False)] = False
    return mask
