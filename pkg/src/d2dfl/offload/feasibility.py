"""Constraint audit for offload plans."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..network import DeviceProfile, Topology, tx_cost_matrix
from ..similarity import SimilarityState
from .plan import OffloadPlan
from .state import OptState

REL_TOL = 1e-9

CONSTRAINTS = {
    "one_sampled_endpoint": "ratios only on links with exactly one sampled endpoint",
    "sender_unsampled": "sampled devices never send",
    "link_exists": "ratios only on links present in the topology",
    "sampling_budget": "exactly S devices sampled",
    "cluster_cap": "ratios into a receiver cluster sum to at most the sender's cluster count",
    "matched_pair": "ratios only on matched cluster pairs",
    "processing_capacity": "processing energy within capacity at sampled devices",
    "transmit_budget": "transmit energy within budget",
    "similarity_range": "connectivity-similarity values in [0, 1]",
    "ratio_box": "ratios in [0, 1]",
}


@dataclass(frozen=True)
class Violation:
    constraint: str
    where: tuple
    slack: float
    preexisting: bool = False


@dataclass
class FeasibilityReport:
    violations: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def new_violations(self) -> list:
        """Violations the plan caused, excluding ones present before it."""
        return [v for v in self.violations if not v.preexisting]

    def by_constraint(self, name: str) -> list:
        return [v for v in self.violations if v.constraint == name]

    def __bool__(self) -> bool:
        return self.feasible


def _viol(lhs: float, rhs: float, rel_tol: float) -> bool:
    return lhs - rhs > rel_tol * max(1.0, abs(rhs))


def planned_inflow(plan: OffloadPlan, state: OptState, similarity: SimilarityState,
                   topo: Topology) -> np.ndarray:
    """Similarity-discounted datapoints each device gains from the plan."""
    if plan.n_pairs == 0:
        return np.zeros(plan.n)
    big = similarity.lam * topo.adjacency
    gain = state.eligible[plan.pair_src, plan.pair_src_cluster] * big[plan.pair_src, plan.pair_dst]
    return np.bincount(plan.pair_dst, weights=gain * plan.ratios, minlength=plan.n)


def transmit_energy(plan: OffloadPlan, data_totals, profiles: Sequence[DeviceProfile]) -> np.ndarray:
    """Per-sender energy: sender data size times the cost-weighted link ratios."""
    agg = plan.aggregates()
    psi = tx_cost_matrix(profiles)
    return np.asarray(data_totals, dtype=np.float64) * (agg * psi).sum(axis=1)


def check_feasibility(plan: OffloadPlan, state: OptState, profiles: Sequence[DeviceProfile],
                      topo: Topology, similarity: SimilarityState, sampled,
                      S: int | None = None, rel_tol: float = REL_TOL) -> FeasibilityReport:
    """Evaluate every constraint of the step problem against ``plan``.

    ``state`` and ``similarity`` describe the network before the plan is
    applied. Processing-capacity violations already present before the plan
    are reported with ``preexisting=True``.
    """
    rep = FeasibilityReport()
    x = np.asarray(sampled, dtype=bool)
    r = plan.ratios
    ps, pd = plan.pair_src, plan.pair_dst
    active = r > 0

    for p in np.flatnonzero(r < -rel_tol):
        rep.violations.append(Violation("ratio_box", (int(p),), float(r[p])))
    for p in np.flatnonzero(r > 1 + rel_tol):
        rep.violations.append(Violation("ratio_box", (int(p),), float(1 - r[p])))

    agg = plan.aggregates()
    for k, i in zip(*np.nonzero(agg > 0)):
        if not x[k] and not x[i]:
            rep.violations.append(Violation("one_sampled_endpoint", (int(k), int(i)), -float(agg[k, i])))
        if x[k]:
            rep.violations.append(Violation("sender_unsampled", (int(k), int(i)), -float(agg[k, i])))
        if not topo.adjacency[k, i]:
            rep.violations.append(Violation("link_exists", (int(k), int(i)), -float(agg[k, i])))

    if S is not None and int(x.sum()) != S:
        rep.violations.append(Violation("sampling_budget", (), float(S - x.sum())))

    if plan.n_pairs:
        same = (np.array_equal(ps, similarity.pair_src) and np.array_equal(pd, similarity.pair_dst)
                and np.array_equal(plan.pair_src_cluster, similarity.pair_src_cluster)
                and np.array_equal(plan.pair_dst_cluster, similarity.pair_dst_cluster))
        if not same:
            matched = set(zip(similarity.pair_src.tolist(), similarity.pair_dst.tolist(),
                              similarity.pair_src_cluster.tolist(), similarity.pair_dst_cluster.tolist()))
            for p in np.flatnonzero(active):
                key = (int(ps[p]), int(pd[p]), int(plan.pair_src_cluster[p]), int(plan.pair_dst_cluster[p]))
                if key not in matched:
                    rep.violations.append(Violation("matched_pair", key, -float(r[p])))
        into = {}
        for p in np.flatnonzero(active):
            key = (int(ps[p]), int(pd[p]), int(plan.pair_dst_cluster[p]))
            into[key] = into.get(key, 0.0) + float(r[p])
        for (k, i, c), tot in into.items():
            ck = float(similarity.n_src_clusters[k])
            if _viol(tot, ck, rel_tol):
                rep.violations.append(Violation("cluster_cap", (k, i, c), ck - tot))

    totals = state.totals
    inflow = planned_inflow(plan, state, similarity, topo)
    for i in np.flatnonzero(x):
        prof = profiles[i]
        before = prof.proc_unit_cost * totals[i]
        after = prof.proc_unit_cost * (totals[i] + inflow[i])
        if _viol(after, prof.proc_capacity, rel_tol):
            rep.violations.append(Violation("processing_capacity", (int(i),), prof.proc_capacity - after,
                                            preexisting=_viol(before, prof.proc_capacity, rel_tol)))

    etx = transmit_energy(plan, totals, profiles)
    for k in np.flatnonzero(etx > 0):
        if _viol(etx[k], profiles[k].tx_budget, rel_tol):
            rep.violations.append(Violation("transmit_budget", (int(k),), profiles[k].tx_budget - etx[k]))

    big = similarity.lam * topo.adjacency
    bad = np.argwhere((big < -rel_tol) | (big > 1 + rel_tol) | ~np.isfinite(big))
    for k, i in bad:
        v = big[k, i]
        rep.violations.append(Violation("similarity_range", (int(k), int(i)),
                                        float(-v if v < 0 else 1 - v) if math.isfinite(v) else -math.inf))
    return rep
