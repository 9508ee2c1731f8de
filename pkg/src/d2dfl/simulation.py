"""Network instances and the end-to-end sampled FedL loop with offloading."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ._seeding import derive_rng
from .baselines import SamplingContext, greedy_offload
from .data import LabeledDataset, LocalDataset, PartitionConfig, load_dataset, make_blobs, partition_dataset, \
    train_test_split
from .errors import ConfigError
from .fedl import aggregate, aggregate_masked, execute_offload_transfer, feddrop_mask, global_loss, \
    local_update, weighted_gradient
from .models import make_model
from .network import LinkFailureConfig, ResourceRanges, Topology, apply_link_failures, \
    generate_erdos_renyi, sample_device_profiles, tx_cost_matrix
from .offload import ObjectiveWeights, OffloadPlan, OffloadPlanner, OptState, active_link_rate, check_feasibility
from .similarity import SimilarityState, build_similarity_state, kmeans


@dataclass(frozen=True)
class DataConfig:
    n_classes: int = 10
    n_per_class: int = 400
    dim: int = 8
    spread: float = 1.0
    separation: float = 4.0
    test_fraction: float = 0.2
    path: str | None = None


@dataclass(frozen=True)
class InstanceConfig:
    n: int = 20
    link_prob: float = 0.1
    symmetric: bool = False
    seed: int = 0
    partition: PartitionConfig = PartitionConfig()
    ranges: ResourceRanges = ResourceRanges()
    data: DataConfig = DataConfig()
    k_clusters: int | None = None
    kmeans_iters: int = 100


@dataclass(eq=False)
class Instance:
    """One network realization with its data and similarity estimates."""

    topology: Topology
    profiles: list
    datasets: list
    cluster_profiles: list
    similarity: SimilarityState
    test: LabeledDataset
    n_classes: int
    seed: int = 0

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def dim(self) -> int:
        return self.test.dim

    @property
    def data_sizes(self) -> np.ndarray:
        return np.array([len(d) for d in self.datasets], dtype=np.float64)

    def cluster_counts(self) -> np.ndarray:
        kmax = max(p.k for p in self.cluster_profiles)
        out = np.zeros((self.n, kmax))
        for i, p in enumerate(self.cluster_profiles):
            out[i, :p.k] = p.cluster_sizes
        return out


def build_instance(cfg: InstanceConfig, full: LabeledDataset | None = None) -> Instance:
    seed = cfg.seed
    if full is None:
        d = cfg.data
        full = load_dataset(d.path) if d.path else make_blobs(
            d.n_classes, d.n_per_class, d.dim, d.spread, d.separation, seed=seed)
    train, test = train_test_split(full, cfg.data.test_fraction, seed)
    topo = generate_erdos_renyi(cfg.n, cfg.link_prob, seed, cfg.symmetric)
    part = PartitionConfig(cfg.partition.labels_per_device, cfg.partition.mean_size,
                           cfg.partition.variance_factor, seed)
    datasets = partition_dataset(train, cfg.n, part)
    profiles = sample_device_profiles(cfg.n, cfg.ranges, seed)
    cps = []
    for i, ds in enumerate(datasets):
        k = cfg.k_clusters or len(np.unique(ds.y))
        cp = kmeans(ds.X, k, seed, max_iters=cfg.kmeans_iters, device=i)
        cps.append(cp)
        datasets[i] = ds.with_clusters(cp.assignment)
    sim = build_similarity_state(cps, topo)
    return Instance(topo, profiles, datasets, cps, sim, test, int(full.y.max()) + 1, seed)


class Sampler(Protocol):
    resamples: bool

    def select(self, ctx: SamplingContext) -> np.ndarray: ...


@dataclass
class FixedSampler:
    x: np.ndarray
    resamples: bool = False

    def select(self, ctx: SamplingContext) -> np.ndarray:
        return np.asarray(self.x, dtype=bool)


@dataclass(frozen=True)
class RunConfig:
    T: int = 50
    tau: int = 5
    eta: float = 0.01
    model: str = "logistic"
    hidden: int = 32
    weights: ObjectiveWeights = ObjectiveWeights()
    offload: str = "ours"
    greedy_targets: tuple | None = None
    failure_rate: float = 0.0
    feddrop_rate: float | None = None
    track_objective: bool = False
    check_plans: bool = True
    warm_start: bool = True

    def __post_init__(self):
        if self.tau < 1 or self.T < 1 or self.T % self.tau:
            raise ConfigError("T must be a positive multiple of tau")
        if not self.eta > 0:
            raise ConfigError("eta must be > 0")
        if self.offload not in ("ours", "greedy", "none"):
            raise ConfigError(f"unknown offload mode {self.offload!r}")
        if self.feddrop_rate is not None:
            if self.model != "mlp":
                raise ConfigError("feddrop needs the mlp model")
            if not 0.0 <= self.feddrop_rate < 1.0:
                raise ConfigError("feddrop rate must lie in [0, 1)")


@dataclass
class AggregationRecord:
    k: int
    t: int
    accuracy: float
    global_loss: float
    data_processed: float
    energy_processing: float
    energy_transmit: float
    active_link_rate: float
    params_transmitted: int
    sampled: tuple


@dataclass
class SimulationResult:
    records: list
    ledger: list
    plans: list
    step_rates: list
    step_volume: list
    objective_terms: list
    estimated_totals: list
    raw_totals: list
    feasibility_failures: int = 0
    final_w: np.ndarray | None = None
    planned_rates: list = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].accuracy if self.records else 0.0

    def objective(self) -> float:
        """Time average of the weighted loss, processing and transmit terms."""
        if not self.objective_terms:
            raise ConfigError("run was made without objective tracking")
        return float(np.mean([sum(t) for t in self.objective_terms]))


def _eligible_counts(ds: LocalDataset, k: int) -> np.ndarray:
    return ds.eligible_counts(k).astype(np.float64)


def _execute_plan(plan: OffloadPlan, datasets: list, rng: np.random.Generator, kmax: int):
    """Move data per plan; returns per-pair moved counts and per-link volumes."""
    moved = np.zeros(plan.n_pairs, dtype=np.int64)
    on = np.flatnonzero(plan.ratios > 0)
    if len(on) == 0:
        return moved
    base = {int(k): _eligible_counts(datasets[k], kmax) for k in np.unique(plan.pair_src[on])}
    by_link = defaultdict(list)
    for p in on:
        by_link[(int(plan.pair_src[p]), int(plan.pair_dst[p]))].append(p)
    for (k, i) in sorted(by_link):
        ps = by_link[(k, i)]
        ratios = {(int(plan.pair_src_cluster[p]), int(plan.pair_dst_cluster[p])): float(plan.ratios[p])
                  for p in ps}
        bc = {b: int(base[k][b]) for b, _ in ratios}
        datasets[k], datasets[i], mv = execute_offload_transfer(datasets[k], datasets[i], ratios, rng, bc)
        for p in ps:
            moved[p] = mv[(int(plan.pair_src_cluster[p]), int(plan.pair_dst_cluster[p]))]
    return moved


def _link_rates(plan: OffloadPlan, moved: np.ndarray, totals_before: np.ndarray, topo: Topology,
                sampled) -> float:
    st = OptState(totals_before[:, None], totals_before[:, None], 1.0)
    return active_link_rate(plan, st, topo, sampled, volumes=moved)


def run_simulation(inst: Instance, sampler, cfg: RunConfig, seed: int = 0) -> SimulationResult:
    """Sample, offload and train for ``cfg.T`` steps, aggregating every ``tau``.

    At each step offloading happens first, then every sampled device takes
    one local gradient step on its current data.
    """
    n = inst.n
    model = make_model(cfg.model, inst.dim, inst.n_classes, cfg.hidden)
    w = model.init(derive_rng(seed, "model-init"))
    datasets = list(inst.datasets)
    kmax = max(p.k for p in inst.cluster_profiles)
    sizes0 = inst.data_sizes

    def losses_at(wv):
        return np.array([model.loss(wv, d.X, d.y) if len(d) else 0.0 for d in datasets])

    counts = np.zeros(n)
    losses = losses_at(w)
    ctx = SamplingContext(0, sizes0, losses, None, counts.copy())
    x = np.asarray(sampler.select(ctx), dtype=bool)
    counts += x
    if cfg.offload == "ours" and sampler.resamples:
        raise ConfigError("the planner needs a fixed sampled set; use greedy offloading for resampling baselines")

    failures = LinkFailureConfig(cfg.failure_rate, int(derive_rng(seed, "failures").integers(2**31))) \
        if cfg.failure_rate > 0 else None

    planner = None
    if cfg.offload == "ours":
        g0 = float(np.linalg.norm(weighted_gradient(model, w, [datasets[i] for i in np.flatnonzero(x)])))
        planner = OffloadPlanner(inst.profiles, inst.topology, inst.similarity, x, cfg.weights,
                                 OptState.from_counts(inst.cluster_counts(), g0), cfg.tau,
                                 failures=failures, warm_start=cfg.warm_start)
    sim_state = inst.similarity
    greedy_eligible = np.zeros((n, kmax))

    local = {int(i): w.copy() for i in np.flatnonzero(x)}
    delta = defaultdict(float)
    records, ledger, plans, rates, volumes, obj_terms = [], [], [], [], [], []
    est_totals, raw_totals = [], []
    cum_proc = cum_ep = cum_etx = 0.0
    cum_params = 0
    period_rates = []
    feas_fail = 0
    planned_rates = []
    psi = tx_cost_matrix(inst.profiles)
    drop_rng = derive_rng(seed, "feddrop")

    for t in range(1, cfg.T + 1):
        topo_t = apply_link_failures(inst.topology, failures, t) if failures else inst.topology
        raw_before = np.array([len(d) for d in datasets], dtype=np.float64)
        etx = np.zeros(n)
        step_rate = 0.0
        step_vol = 0.0
        if cfg.offload != "none":
            if planner is not None:
                plan = planner.step(t, topo_t)
                rec = planner.history[-1]
                planned_rates.append(rec.active_rate)
                if cfg.check_plans:
                    rep = check_feasibility(plan, rec.state_before, rec.profiles, topo_t,
                                            rec.similarity_before, x)
                    feas_fail += len(rep.new_violations())
            else:
                for i in range(n):
                    greedy_eligible[i] = _eligible_counts(datasets[i], kmax)
                target = 0.0
                if cfg.greedy_targets is not None and t - 1 < len(cfg.greedy_targets):
                    target = float(cfg.greedy_targets[t - 1])
                plan = greedy_offload(x, inst.profiles, topo_t, target, sim_state, greedy_eligible,
                                      raw_before, t)
                if cfg.check_plans:
                    raw_counts = np.array([d.cluster_counts(kmax) for d in datasets], dtype=np.float64)
                    st = OptState(raw_counts, greedy_eligible.copy(), 1.0)
                    rep = check_feasibility(plan, st, inst.profiles, topo_t, sim_state, x)
                    feas_fail += len(rep.new_violations())
            moved = _execute_plan(plan, datasets, derive_rng(seed, "transfer", t), kmax)
            plan = plan.with_moved(moved)
            plans.append(plan)
            agg = plan.aggregates()
            etx = raw_before * (agg * psi).sum(axis=1)
            step_rate = _link_rates(plan, moved, raw_before, topo_t, x)
            step_vol = float(moved.sum())
        rates.append(step_rate)
        volumes.append(step_vol)
        period_rates.append(step_rate)

        sampled_ids = np.flatnonzero(x)
        ep = np.zeros(n)
        for i in sampled_ids:
            local[int(i)] = local_update(model, local[int(i)], datasets[i], cfg.eta)
            d_i = len(datasets[i])
            delta[int(i)] += d_i
            ep[i] = inst.profiles[i].proc_unit_cost * d_i
            cum_proc += d_i
        cum_ep += float(ep.sum())
        cum_etx += float(etx.sum())
        for dev in range(n):
            if ep[dev] or etx[dev]:
                ledger.append((t, dev, float(ep[dev]), float(etx[dev])))
        raw_totals.append(np.array([len(d) for d in datasets], dtype=np.float64)[sampled_ids])
        if planner is not None:
            est_totals.append(planner.state.totals[sampled_ids])

        if cfg.track_objective:
            wsum = sum(delta[int(i)] for i in sampled_ids)
            if wsum > 0:
                w_virtual = sum(delta[int(i)] * local[int(i)] for i in sampled_ids) / wsum
            else:
                w_virtual = w
            loss_t = global_loss(model, w_virtual, datasets)
            w8 = cfg.weights
            obj_terms.append((w8.alpha * loss_t, w8.beta_e * float(ep.sum()), w8.gamma_e * float(etx.sum())))

        if t % cfg.tau == 0:
            k = t // cfg.tau
            uploads = [(local[int(i)], delta[int(i)]) for i in sampled_ids]
            if cfg.feddrop_rate is not None:
                masked = [(wi, di, feddrop_mask(model.layout, cfg.feddrop_rate, drop_rng)) for wi, di in uploads]
                w = aggregate_masked(masked, w)
                cum_params += sum(int(m.sum()) for _, _, m in masked)
            else:
                w = aggregate(uploads)
                cum_params += len(sampled_ids) * len(w)
            new_losses = losses_at(w) if sampler.resamples else None
            if planner is not None:
                gnow = float(np.linalg.norm(weighted_gradient(model, w, [datasets[i] for i in sampled_ids])))
                planner.observe_gradient(gnow)
            records.append(AggregationRecord(
                k=k, t=t,
                accuracy=model.accuracy(w, inst.test.X, inst.test.y),
                global_loss=global_loss(model, w, datasets),
                data_processed=cum_proc, energy_processing=cum_ep, energy_transmit=cum_etx,
                active_link_rate=float(np.mean(period_rates)) if period_rates else 0.0,
                params_transmitted=cum_params, sampled=tuple(int(i) for i in sampled_ids)))
            period_rates = []
            if sampler.resamples and t < cfg.T:
                ctx = SamplingContext(k, sizes0, new_losses, losses, counts.copy())
                x = np.asarray(sampler.select(ctx), dtype=bool)
                counts += x
            losses = new_losses
            local = {int(i): w.copy() for i in np.flatnonzero(x)}
            delta = defaultdict(float)

    return SimulationResult(records, ledger, plans, rates, volumes, obj_terms, est_totals, raw_totals,
                            feas_fail, w, planned_rates)
