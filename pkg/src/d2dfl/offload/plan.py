"""Offload plans: per-pair ratios on top of a similarity state's pair list."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..similarity import SimilarityState


@dataclass(frozen=True, eq=False)
class OffloadPlan:
    """Ratios for one timestep, aligned with the similarity state's pairs.

    ``ratios[p]`` is the share of sender cluster ``pair_src_cluster[p]`` on
    device ``pair_src[p]`` sent to cluster ``pair_dst_cluster[p]`` on device
    ``pair_dst[p]``.
    """

    t: int
    ratios: np.ndarray
    pair_src: np.ndarray
    pair_dst: np.ndarray
    pair_src_cluster: np.ndarray
    pair_dst_cluster: np.ndarray
    n: int
    objective: float = float("nan")
    n_iter: int = 0
    history: tuple = ()
    zeroed_receivers: tuple = ()
    moved: np.ndarray | None = field(default=None)

    @classmethod
    def zeros(cls, sim: SimilarityState, t: int = 0) -> "OffloadPlan":
        return cls(t, np.zeros(sim.n_pairs), sim.pair_src, sim.pair_dst,
                   sim.pair_src_cluster, sim.pair_dst_cluster, sim.n)

    @property
    def n_pairs(self) -> int:
        return len(self.ratios)

    def aggregates(self) -> np.ndarray:
        """Link-level ratios: the sum of pair ratios on each directed link."""
        out = np.zeros((self.n, self.n))
        np.add.at(out, (self.pair_src, self.pair_dst), self.ratios)
        return out

    def is_zero(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.ratios) <= tol))

    def with_moved(self, moved) -> "OffloadPlan":
        return OffloadPlan(self.t, self.ratios, self.pair_src, self.pair_dst, self.pair_src_cluster,
                           self.pair_dst_cluster, self.n, self.objective, self.n_iter, self.history,
                           self.zeroed_receivers, np.asarray(moved, dtype=np.int64))

    def rows(self, tol: float = 0.0):
        """Nonzero ``(t, src, dst, src_cluster, dst_cluster, ratio, moved)`` rows."""
        moved = self.moved if self.moved is not None else np.zeros(self.n_pairs, dtype=np.int64)
        for p in np.flatnonzero(self.ratios > tol):
            yield (self.t, int(self.pair_src[p]), int(self.pair_dst[p]),
                   int(self.pair_src_cluster[p]), int(self.pair_dst_cluster[p]),
                   float(self.ratios[p]), int(moved[p]))


PLAN_COLUMNS = ("t", "src", "dst", "src_cluster", "dst_cluster", "ratio", "datapoints_moved")


def export_plans_csv(plans, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PLAN_COLUMNS)
        for plan in plans:
            for row in plan.rows():
                w.writerow([*row[:5], repr(row[5]), row[6]])
