"""Shared builders and independent oracles for the test suite."""
import itertools

import numpy as np

from d2dfl.network import DeviceProfile, Topology
from d2dfl.offload import ObjectiveWeights, OptState
from d2dfl.similarity import ClusterProfile, build_similarity_state


def profile(i, n, P, p, budget, psi, buf=100.0):
    return DeviceProfile(i, P, p, budget, {j: psi for j in range(n) if j != i}, buf)


def three_device_instance(seed):
    """Devices 0 and 1 (unsampled) send to device 2 (sampled); two clusters each."""
    rng = np.random.default_rng(seed)
    dim = 3
    cps = []
    counts = rng.integers(20, 61, size=(3, 2)).astype(float)
    for i in range(3):
        cent = rng.uniform(0, 1, (2, dim))
        sizes = counts[i].astype(np.int64)
        assign = np.repeat(np.arange(2), sizes)
        cps.append(ClusterProfile(i, cent, sizes, assign))
    adj = np.zeros((3, 3), dtype=np.int8)
    adj[0, 2] = adj[1, 2] = 1
    topo = Topology(adj)
    sim = build_similarity_state(cps, topo)
    totals = counts.sum(axis=1)
    psi = rng.uniform(0.01, 0.1, 3)
    profiles = []
    for i in range(3):
        unit = rng.uniform(1.0, 1.1)
        cap = unit * (totals[i] + rng.uniform(0, 60))
        profiles.append(profile(i, 3, cap, unit, rng.uniform(1.0, 6.0), psi[i]))
    weights = ObjectiveWeights(alpha=100.0, beta_e=float(rng.uniform(1e-4, 1e-2)),
                               gamma_e=float(10 ** rng.uniform(-3, 0)), kappa=float(rng.uniform(0.5, 2)))
    state = OptState.from_counts(counts, float(rng.uniform(0.5, 3)))
    sampled = np.array([False, False, True])
    return state, sampled, sim, profiles, topo, weights


def oracle_objective(ratios, state, sampled, sim, profiles, topo, weights):
    """Objective and feasibility of full pair-ratio vector, evaluated from scratch."""
    totals = state.totals
    x = np.asarray(sampled, dtype=bool)
    D = totals.copy()
    tx = np.zeros(len(totals))
    for p in range(sim.n_pairs):
        k, i = sim.pair_src[p], sim.pair_dst[p]
        c = sim.pair_src_cluster[p]
        if topo.adjacency[k, i] == 0 or x[k] or not x[i]:
            continue
        D[i] += state.eligible[k, c] * sim.lam[k, i] * ratios[p]
        tx[k] += totals[k] * profiles[k].tx_cost(i) * ratios[p]
    Ds = D[x]
    d_n = Ds.sum() + totals[~x].sum()
    loss = totals[~x].sum() / d_n * state.extrapolated_gradient() + weights.kappa / x.sum() * np.sum(Ds ** -0.5)
    proc = sum(profiles[i].proc_unit_cost * D[i] for i in np.flatnonzero(x))
    f = weights.alpha * loss + weights.beta_e * proc + weights.gamma_e * tx.sum()
    feasible = all(profiles[i].proc_unit_cost * D[i] <= profiles[i].proc_capacity * (1 + 1e-12) + 1e-12
                   for i in np.flatnonzero(x) if profiles[i].proc_unit_cost * totals[i] <= profiles[i].proc_capacity)
    feasible = feasible and all(tx[k] <= profiles[k].tx_budget * (1 + 1e-12) for k in range(len(totals)))
    return f, feasible


def grid_best(state, sampled, sim, profiles, topo, weights, step=0.1):
    """Best feasible objective over the ratio grid, evaluated in one vectorized sweep."""
    vals = np.round(np.arange(0.0, 1.0 + 1e-9, step), 10)
    C = np.array(list(itertools.product(vals, repeat=sim.n_pairs)))
    totals = state.totals
    x = np.asarray(sampled, dtype=bool)
    n = len(totals)
    gain = np.zeros((sim.n_pairs, n))
    cost = np.zeros((sim.n_pairs, n))
    for p in range(sim.n_pairs):
        k, i, c = sim.pair_src[p], sim.pair_dst[p], sim.pair_src_cluster[p]
        if topo.adjacency[k, i] and not x[k] and x[i]:
            gain[p, i] = state.eligible[k, c] * sim.lam[k, i]
            cost[p, k] = totals[k] * profiles[k].tx_cost(i)
    D = totals[None, :] + C @ gain
    tx = C @ cost
    Ds = D[:, x]
    d_n = Ds.sum(axis=1) + totals[~x].sum()
    loss = totals[~x].sum() / d_n * state.extrapolated_gradient() + weights.kappa / x.sum() * (Ds ** -0.5).sum(axis=1)
    unit = np.array([p.proc_unit_cost for p in profiles])
    capv = np.array([p.proc_capacity for p in profiles])
    budget = np.array([p.tx_budget for p in profiles])
    f = weights.alpha * loss + weights.beta_e * (D[:, x] * unit[x]).sum(axis=1) + weights.gamma_e * tx.sum(axis=1)
    ok = np.all(D[:, x] * unit[x] <= capv[x] * (1 + 1e-12), axis=1) & np.all(tx <= budget * (1 + 1e-12), axis=1)
    return float(f[ok].min())
