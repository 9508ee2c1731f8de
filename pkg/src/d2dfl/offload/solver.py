"""Per-timestep offloading subproblem and its projected-gradient solution."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import _kernels
from ..errors import ConfigError, InfeasibleStartWarning
from ..network import DeviceProfile, Topology, tx_cost_matrix
from ..similarity import SimilarityState
from .plan import OffloadPlan
from .state import OptState
from .weights import ObjectiveWeights

MAX_ITER = 5000
TOL = 1e-8


@dataclass(frozen=True, eq=False)
class OffloadProblem:
    """Flattened instance: one variable per usable matched pair.

    ``a`` maps a ratio to the similarity-discounted datapoints it adds at the
    receiver, ``e`` to the sender's transmit energy. Receiver groups index
    into the sampled devices, sender groups into the unsampled senders.
    """

    pair_index: np.ndarray
    a: np.ndarray
    e: np.ndarray
    recv: np.ndarray
    send: np.ndarray
    d0: np.ndarray
    pcost: np.ndarray
    cap: np.ndarray
    budget: np.ndarray
    sampled_ids: np.ndarray
    sender_ids: np.ndarray
    d_unsampled: float
    grad: float
    weights: ObjectiveWeights
    zeroed_receivers: tuple

    @property
    def n_vars(self) -> int:
        return len(self.a)

    def kernel_args(self):
        w = self.weights
        return (self.a, self.e, self.recv, self.send, self.d0, self.pcost, self.cap, self.budget,
                w.alpha, w.beta_e, w.gamma_e, w.kappa, self.grad, self.d_unsampled,
                float(len(self.sampled_ids)))

    def objective(self, x) -> float:
        w = self.weights
        return _kernels.objective(np.asarray(x, dtype=np.float64), self.a, self.e, self.recv,
                                  self.d0, self.pcost, w.alpha, w.beta_e, w.gamma_e, w.kappa,
                                  self.grad, self.d_unsampled, float(len(self.sampled_ids)))


def build_problem(state: OptState, sampled, similarity: SimilarityState,
                  profiles: Sequence[DeviceProfile], topo: Topology,
                  weights: ObjectiveWeights, grad: float | None = None,
                  warn: bool = True) -> OffloadProblem:
    x = np.asarray(sampled, dtype=bool)
    n = len(x)
    if topo.n != n or len(profiles) != n or similarity.n != n:
        raise ConfigError("sampling vector, topology, profiles and similarity sizes differ")
    totals = state.totals
    sampled_ids = np.flatnonzero(x)
    if len(sampled_ids) == 0:
        raise ConfigError("at least one device must be sampled")
    pos = np.full(n, -1, dtype=np.int64)
    pos[sampled_ids] = np.arange(len(sampled_ids))

    P = np.array([p.proc_capacity for p in profiles])
    pc = np.array([p.proc_unit_cost for p in profiles])
    with np.errstate(divide="ignore", invalid="ignore"):
        limit = np.where(pc > 0, P / np.where(pc > 0, pc, 1.0), math.inf)
    cap_all = limit - totals
    infeasible = x & (cap_all < 0)
    if warn and infeasible.any():
        warnings.warn(f"devices {np.flatnonzero(infeasible).tolist()} already exceed their "
                      "processing capacity; their inflow is fixed at zero",
                      InfeasibleStartWarning, stacklevel=3)

    big_lam = similarity.lam * topo.adjacency
    ps, pd = similarity.pair_src, similarity.pair_dst
    elig = state.eligible[ps, similarity.pair_src_cluster] if similarity.n_pairs else np.zeros(0)
    lam_pair = big_lam[ps, pd] if similarity.n_pairs else np.zeros(0)
    a_all = elig * lam_pair
    use = (x[pd] & ~x[ps] & (a_all > 0) & ~infeasible[pd] & (cap_all[pd] > 0)) if similarity.n_pairs \
        else np.zeros(0, dtype=bool)
    idx = np.flatnonzero(use)

    psi = tx_cost_matrix(profiles)
    if np.any(psi[ps[idx], pd[idx]] <= 0):
        raise ConfigError("a usable link has no transmit cost defined at its sender")
    senders = np.unique(ps[idx])
    spos = np.full(n, -1, dtype=np.int64)
    spos[senders] = np.arange(len(senders))
    return OffloadProblem(
        pair_index=idx,
        a=a_all[idx].astype(np.float64),
        e=(totals[ps[idx]] * psi[ps[idx], pd[idx]]).astype(np.float64),
        recv=pos[pd[idx]],
        send=spos[ps[idx]],
        d0=totals[sampled_ids].astype(np.float64),
        pcost=pc[sampled_ids].astype(np.float64),
        cap=np.maximum(cap_all[sampled_ids], 0.0),
        budget=np.array([profiles[k].tx_budget for k in senders], dtype=np.float64),
        sampled_ids=sampled_ids,
        sender_ids=senders,
        d_unsampled=float(totals[~x].sum()),
        grad=float(state.extrapolated_gradient() if grad is None else grad),
        weights=weights,
        zeroed_receivers=tuple(int(i) for i in np.flatnonzero(infeasible)),
    )


def solve_problem(problem: OffloadProblem, x0=None, max_iter: int = MAX_ITER, tol: float = TOL,
                  record_history: bool = False):
    """Run the projected-gradient kernel; returns ``(x, objective, n_iter, history)``."""
    start = np.zeros(problem.n_vars) if x0 is None else np.asarray(x0, dtype=np.float64)
    return _kernels.pgd_solve(*problem.kernel_args(), start, max_iter, tol, record_history)


def solve_offload_step(state: OptState, sampled, similarity: SimilarityState,
                       profiles: Sequence[DeviceProfile], topo: Topology,
                       weights: ObjectiveWeights, t: int = 0, warm_start=None,
                       grad: float | None = None, max_iter: int = MAX_ITER, tol: float = TOL,
                       record_history: bool = False) -> OffloadPlan:
    """Minimize the per-step objective over feasible ratios.

    ``warm_start`` is a full-length ratio vector (e.g. the previous plan);
    without it the solver starts from zero and is fully deterministic.
    """
    prob = build_problem(state, sampled, similarity, profiles, topo, weights, grad)
    x0 = None
    if warm_start is not None:
        x0 = np.asarray(warm_start, dtype=np.float64)[prob.pair_index]
    x, f, n_iter, hist = solve_problem(prob, x0, max_iter, tol, record_history)
    ratios = np.zeros(similarity.n_pairs)
    ratios[prob.pair_index] = np.clip(x, 0.0, 1.0)
    return OffloadPlan(t, ratios, similarity.pair_src, similarity.pair_dst,
                       similarity.pair_src_cluster, similarity.pair_dst_cluster, similarity.n,
                       objective=float(f), n_iter=int(n_iter), history=tuple(hist),
                       zeroed_receivers=prob.zeroed_receivers)
