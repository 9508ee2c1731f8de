"""Sequential offload planning over a horizon with gradient extrapolation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError
from ..network import DeviceProfile, LinkFailureConfig, ResourceSchedule, Topology, apply_link_failures
from ..similarity import SimilarityState, update_sigma
from .feasibility import planned_inflow
from .plan import OffloadPlan
from .solver import MAX_ITER, TOL, solve_offload_step
from .state import OptState, update_gradient_scale
from .weights import ObjectiveWeights


def apply_plan(plan: OffloadPlan, state: OptState, similarity: SimilarityState,
               topo: Topology) -> tuple[OptState, SimilarityState]:
    """Advance the estimated counts and the centroid differences by one step."""
    if plan.n_pairs == 0 or plan.is_zero():
        return state.evolve(received=np.zeros_like(state.data_counts)), similarity
    big = similarity.lam * topo.adjacency
    ps, pd = plan.pair_src, plan.pair_dst
    sc, dc = plan.pair_src_cluster, plan.pair_dst_cluster
    elig = state.eligible[ps, sc]
    received = np.zeros_like(state.data_counts)
    np.add.at(received, (pd, dc), elig * big[ps, pd] * plan.ratios)
    sent = np.zeros_like(state.eligible)
    np.add.at(sent, (ps, sc), elig * plan.ratios)
    eligible = np.maximum(state.eligible - sent, 0.0)
    new_state = state.evolve(data_counts=state.data_counts + received, eligible=eligible,
                             received=received)
    return new_state, update_sigma(similarity, plan.ratios)


def active_link_rate(plan: OffloadPlan, state: OptState, topo: Topology, sampled,
                     volumes=None) -> float:
    """Mean offload rate over the links currently able to carry traffic.

    A link counts when it exists in ``topo`` and runs from an unsampled to a
    sampled device. Its rate is the volume it carries divided by the
    sender's data size; idle links contribute zero, so saturation shows up
    as a falling mean. ``volumes`` overrides the planned per-pair volume
    (e.g. with the datapoints actually moved). Returns 0 with no such link.
    """
    if plan.n_pairs == 0:
        return 0.0
    x = np.asarray(sampled, dtype=bool)
    ps, pd = plan.pair_src, plan.pair_dst
    usable = (topo.adjacency[ps, pd] > 0) & x[pd] & ~x[ps]
    if not usable.any():
        return 0.0
    if volumes is None:
        volumes = state.eligible[ps, plan.pair_src_cluster] * plan.ratios
    links = {}
    for p in np.flatnonzero(usable):
        key = (int(ps[p]), int(pd[p]))
        links[key] = links.get(key, 0.0) + float(volumes[p])
    totals = state.totals
    return float(np.mean([v / totals[k] if totals[k] > 0 else 0.0 for (k, _), v in links.items()]))


@dataclass
class StepRecord:
    t: int
    plan: OffloadPlan
    state_before: OptState
    similarity_before: SimilarityState
    topology: Topology
    profiles: list
    inflow: np.ndarray
    active_rate: float
    grad_used: float


@dataclass
class OffloadPlanner:
    """Plans one step at a time and ingests true gradients at aggregations.

    Each step extrapolates the gradient from the last aggregation, solves the
    step problem on the current topology and advances the estimated counts
    and similarity. ``observe_gradient`` is called after every aggregation.
    """

    profiles: Sequence[DeviceProfile]
    base_topology: Topology
    similarity: SimilarityState
    sampled: np.ndarray
    weights: ObjectiveWeights
    state: OptState
    tau: int
    failures: LinkFailureConfig | None = None
    schedule: ResourceSchedule | None = None
    warm_start: bool = True
    max_iter: int = MAX_ITER
    tol: float = TOL
    history: list = field(default_factory=list)
    _grad_prev: float | None = None
    _last_ratios: np.ndarray | None = None

    def __post_init__(self):
        self.sampled = np.asarray(self.sampled, dtype=bool)
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if self._grad_prev is None:
            self._grad_prev = self.state.grad_avg

    def topology_at(self, t: int) -> Topology:
        if self.failures is None:
            return self.base_topology
        return apply_link_failures(self.base_topology, self.failures, t)

    def profiles_at(self, t: int) -> list:
        return list(self.profiles) if self.schedule is None else self.schedule.at(self.profiles, t)

    def step(self, t: int, topology: Topology | None = None) -> OffloadPlan:
        topo = self.topology_at(t) if topology is None else topology
        profiles = self.profiles_at(t)
        state = self.state.evolve(steps_since_sync=self.state.steps_since_sync + 1)
        warm = None
        if self.warm_start and self._last_ratios is not None:
            warm = self._warm_vector(state, topo, profiles)
        plan = solve_offload_step(state, self.sampled, self.similarity, profiles, topo, self.weights,
                                  t=t, warm_start=warm, max_iter=self.max_iter, tol=self.tol)
        rec = StepRecord(t, plan, state, self.similarity, topo, profiles,
                         planned_inflow(plan, state, self.similarity, topo),
                         active_link_rate(plan, state, topo, self.sampled), state.extrapolated_gradient())
        self.state, self.similarity = apply_plan(plan, state, self.similarity, topo)
        self._last_ratios = plan.ratios
        self.history.append(rec)
        return plan

    def _warm_vector(self, state: OptState, topo: Topology, profiles) -> np.ndarray:
        # zero links whose receiver is saturated or whose value has vanished
        warm = self._last_ratios.copy()
        sim = self.similarity
        if sim.n_pairs == 0:
            return warm
        totals = state.totals
        limit = np.array([p.capacity_datapoints() for p in profiles])
        saturated = totals >= limit
        dead = (sim.lam * topo.adjacency)[sim.pair_src, sim.pair_dst] <= 0
        dead |= state.eligible[sim.pair_src, sim.pair_src_cluster] <= 0
        warm[saturated[sim.pair_dst] | dead] = 0.0
        return warm

    def observe_gradient(self, grad_norm: float) -> None:
        """Ingest the true weighted gradient norm at an aggregation."""
        scale = update_gradient_scale(self._grad_prev, grad_norm, self.tau)
        self._grad_prev = float(grad_norm)
        self.state = self.state.evolve(grad_avg=float(grad_norm), scale=scale, steps_since_sync=0)

    @property
    def plans(self) -> list:
        return [r.plan for r in self.history]


def plan_horizon(initial_state: OptState, sampled, T: int, tau: int, weights: ObjectiveWeights,
                 similarity: SimilarityState, profiles: Sequence[DeviceProfile], topo: Topology,
                 grad_feed: Callable[[int], float] | Sequence[float] | None = None,
                 failures: LinkFailureConfig | None = None, warm_start: bool = True):
    """Plan ``T`` steps; returns ``(plans, states)`` with ``states[t]`` after step t.

    ``grad_feed`` supplies the true gradient norm at aggregation k (called or
    indexed with k = 1, 2, ...). Without it the initial norm is reused and
    the scale stays 1.
    """
    if T < 1:
        raise ConfigError("T must be >= 1")
    planner = OffloadPlanner(profiles, topo, similarity, sampled, weights, initial_state, tau,
                             failures=failures, warm_start=warm_start)
    states = [initial_state]
    for t in range(1, T + 1):
        planner.step(t)
        states.append(planner.state)
        if t % tau == 0 and grad_feed is not None:
            k = t // tau
            g = grad_feed(k) if callable(grad_feed) else grad_feed[k - 1] if k - 1 < len(grad_feed) else None
            if g is not None:
                planner.observe_gradient(g)
    return planner.plans, states
