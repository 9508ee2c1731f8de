"""End-to-end experiment runs, regime sweeps and their on-disk artifacts."""
from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .._seeding import derive_rng
from ..baselines import BaselineConfig, BaselineSampler, SamplingContext
from ..data import PartitionConfig
from ..errors import ConfigError, D2DFLError, InfeasibleStartWarning
from ..fedl import feddrop_mask, weighted_gradient
from ..gcn import GcnModel, bundled_weights, select_sampling
from ..models import make_model
from ..network import LinkFailureConfig
from ..offload import ObjectiveWeights, OptState, OffloadPlanner, surrogate_loss
from ..offload.plan import PLAN_COLUMNS
from ..simulation import DataConfig, FixedSampler, Instance, InstanceConfig, RunConfig, build_instance, \
    run_simulation
from .config import ExperimentConfig, dump_config

BASELINES = ("dpp", "poc", "pyr")
METRIC_COLUMNS = ("method", "k", "t", "accuracy", "global_loss", "data_processed", "energy_processing",
                  "energy_transmit", "active_link_rate", "params_transmitted")


def instance_config(cfg: ExperimentConfig) -> InstanceConfig:
    data = DataConfig(cfg.n_classes, cfg.n_per_class, cfg.dim, cfg.spread, cfg.separation,
                      cfg.test_fraction, cfg.data_path or None)
    part = PartitionConfig(cfg.labels_per_device, cfg.mean_size, cfg.variance_factor, cfg.seed)
    return InstanceConfig(n=cfg.n, link_prob=cfg.link_prob, symmetric=cfg.symmetric, seed=cfg.seed,
                          partition=part, data=data)


def load_scorer(cfg: ExperimentConfig) -> GcnModel:
    return GcnModel.load(cfg.gcn_weights) if cfg.gcn_weights else bundled_weights(cfg.S)


def choose_sampled(cfg: ExperimentConfig, inst: Instance, method: str | None = None) -> np.ndarray:
    """The fixed sampled set a once-sampling method picks on ``inst``."""
    method = method or cfg.sampler
    if method == "ours":
        return select_sampling(load_scorer(cfg), inst, cfg.S)
    if method in ("dpp", "all-nodes"):
        return BaselineSampler(BaselineConfig(method, cfg.pyr_ratio, cfg.seed), cfg.S).select(
            SamplingContext(0, inst.data_sizes))
    raise ConfigError(f"{method!r} resamples every round and has no fixed set")


def _run_config(cfg: ExperimentConfig, offload: str, targets=None) -> RunConfig:
    return RunConfig(T=cfg.T, tau=cfg.tau, eta=cfg.eta, model=cfg.model, hidden=cfg.hidden,
                     weights=cfg.weights(), offload=offload, greedy_targets=targets,
                     failure_rate=cfg.failure_rate, feddrop_rate=cfg.feddrop_rate)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: dict
    sampled: dict
    wall_time: float = 0.0
    out_dir: Path | None = None

    def final_metrics(self) -> dict:
        out = {}
        for m, r in self.runs.items():
            last = r.records[-1]
            out[m] = {"accuracy": last.accuracy, "global_loss": last.global_loss,
                      "data_processed": last.data_processed, "energy_processing": last.energy_processing,
                      "energy_transmit": last.energy_transmit, "params_transmitted": last.params_transmitted,
                      "feasibility_failures": r.feasibility_failures}
        return out


def run_experiment(cfg: ExperimentConfig, write: bool = True, inst: Instance | None = None) -> ExperimentResult:
    """Sample, offload and train per ``cfg``; optionally write artifacts to ``cfg.out_dir``.

    ``sampler = "all"`` runs ours, the three baselines and the all-nodes
    reference. Baselines with offloading use the greedy heuristic fed with
    the per-step volume that ours moved on the same instance.
    """
    start = time.perf_counter()
    inst = inst or build_instance(instance_config(cfg))
    methods = ("ours",) + BASELINES + ("all-nodes",) if cfg.sampler == "all" else (cfg.sampler,)
    runs, sampled = {}, {}
    ours_volume = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InfeasibleStartWarning)
        if cfg.offload and any(m in BASELINES for m in methods) or "ours" in methods:
            x = choose_sampled(cfg, inst, "ours")
            res = run_simulation(inst, FixedSampler(x), _run_config(cfg, "ours" if cfg.offload else "none"),
                                 cfg.seed)
            ours_volume = tuple(res.step_volume)
            if "ours" in methods:
                runs["ours"], sampled["ours"] = res, [int(i) for i in np.flatnonzero(x)]
        for m in methods:
            if m == "ours":
                continue
            if m == "all-nodes":
                sampler = BaselineSampler(BaselineConfig("all-nodes", seed=cfg.seed), inst.n)
                rc = _run_config(cfg, "none")
            else:
                sampler = BaselineSampler(BaselineConfig(m, cfg.pyr_ratio, cfg.seed), cfg.S)
                rc = _run_config(cfg, "greedy", ours_volume) if cfg.offload else _run_config(cfg, "none")
            runs[m] = run_simulation(inst, sampler, rc, cfg.seed)
            sampled[m] = [list(r.sampled) for r in runs[m].records]
    out = ExperimentResult(cfg, {m: runs[m] for m in methods}, sampled, time.perf_counter() - start)
    if write:
        write_outputs(out, cfg.out_dir)
    return out


def write_outputs(res: ExperimentResult, out_dir) -> Path:
    """Write metrics.csv, ledger.csv, plans.csv, rates.csv, config.toml and summary.json.

    Every file except summary.json (which records wall time) is a pure
    function of the config.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m, r in res.runs.items():
            for a in r.records:
                w.writerow([m, a.k, a.t, repr(a.accuracy), repr(a.global_loss), repr(a.data_processed),
                            repr(a.energy_processing), repr(a.energy_transmit), repr(a.active_link_rate),
                            a.params_transmitted])
    with open(out / "ledger.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("method", "t", "device", "energy_processing", "energy_transmit"))
        for m, r in res.runs.items():
            for t, dev, ep, etx in r.ledger:
                w.writerow([m, t, dev, repr(ep), repr(etx)])
    with open(out / "plans.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("method",) + PLAN_COLUMNS)
        for m, r in res.runs.items():
            for plan in r.plans:
                for row in plan.rows():
                    w.writerow([m, *row[:5], repr(row[5]), row[6]])
    with open(out / "rates.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("method", "t", "active_link_rate", "datapoints_moved"))
        for m, r in res.runs.items():
            for t, (rate, vol) in enumerate(zip(r.step_rates, r.step_volume), start=1):
                w.writerow([m, t, repr(rate), repr(vol)])
    dump_config(res.config, out / "config.toml")
    summary = {"config": res.config.to_toml_dict(), "seed": res.config.seed,
               "wall_time_s": res.wall_time, "sampled": res.sampled, "final": res.final_metrics()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    res.out_dir = out
    return out


def aggregations_to_threshold(records, threshold: float) -> int | None:
    """First aggregation index ``k`` whose accuracy reaches ``threshold``."""
    for r in records:
        acc = r.accuracy if hasattr(r, "accuracy") else r[1]
        if acc >= threshold:
            return r.k if hasattr(r, "k") else r[0]
    return None


def feddrop_accounting(model, rate: float, rng: np.random.Generator | None = None):
    """Parameters sent in one upstream message and the mask that produced it.

    ``model`` is a model object or a parameter layout. Models without
    fully-connected dropout support raise ``ConfigError``.
    """
    layout = getattr(model, "layout", model)
    mask = feddrop_mask(layout, rate, rng if rng is not None else np.random.default_rng(0))
    return int(mask.sum()), mask


@dataclass
class PlannerTrace:
    """Per-step planner outputs for one fixed sampled set."""

    rates: np.ndarray
    processed: np.ndarray
    volume: np.ndarray
    est_loss: np.ndarray
    n_links: int
    sampled: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def planner_trace(inst: Instance, sampled, weights: ObjectiveWeights, T: int, tau: int,
                  rho: float = 0.7, failure_rate: float = 0.0, seed: int = 0) -> PlannerTrace:
    """Run the offload planner alone for ``T`` steps.

    In place of training, the gradient norm seen at aggregation k is
    ``g0 * rho**k`` with ``g0`` the sampled gradient norm at the zero model,
    a stand-in for geometric convergence of the convex model.
    """
    x = np.asarray(sampled, dtype=bool)
    model = make_model("logistic", inst.dim, inst.n_classes)
    g0 = float(np.linalg.norm(weighted_gradient(model, model.init(), [inst.datasets[i] for i in np.flatnonzero(x)])))
    failures = LinkFailureConfig(failure_rate, int(derive_rng(seed, "failures").integers(2**31))) \
        if failure_rate > 0 else None
    pl = OffloadPlanner(inst.profiles, inst.topology, inst.similarity, x, weights,
                        OptState.from_counts(inst.cluster_counts(), g0), tau, failures=failures)
    rates, proc, vol, loss = [], [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InfeasibleStartWarning)
        for t in range(1, T + 1):
            plan = pl.step(t)
            rec = pl.history[-1]
            rates.append(rec.active_rate)
            proc.append(float(pl.state.totals[x].mean()))
            vol.append(float((rec.state_before.eligible[plan.pair_src, plan.pair_src_cluster] * plan.ratios).sum()))
            loss.append(surrogate_loss(pl.state, x, weights))
            if t % tau == 0:
                pl.observe_gradient(g0 * rho ** (t // tau))
    adj = inst.topology.adjacency
    n_links = int(((adj > 0) & ~x[:, None] & x[None, :]).sum())
    return PlannerTrace(np.array(rates), np.array(proc), np.array(vol), np.array(loss), n_links, x)


@dataclass
class SweepRow:
    value: float
    processed_per_sampled: float
    offloaded_per_link: float
    normalized_loss: float
    active_link_rate: float
    error: str = ""


SWEEP_PARAMS = ("beta", "gamma", "t")


def sweep(param: str, grid: Sequence[float], cfg: ExperimentConfig, seeds: Sequence[int] | None = None,
          rho: float = 0.7) -> list[SweepRow]:
    """Planner-only regime sweep over ``beta`` (processing weight), ``gamma`` (transmit weight) or ``t``.

    Each row averages over ``seeds`` (default: the config seed). For
    ``beta``/``gamma`` a row summarizes a whole ``cfg.T`` horizon; for ``t``
    it reports the state at step t of one horizon long enough for the grid.
    The estimated loss is normalized by its largest value in the sweep. A
    point that fails is reported with its error and NaN metrics.
    """
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}")
    if not len(grid):
        raise ConfigError("sweep grid is empty")
    seeds = [cfg.seed] if seeds is None else list(seeds)
    setups = []
    for s in seeds:
        c = replace(cfg, seed=s)
        inst = build_instance(instance_config(c))
        setups.append((c, inst, choose_sampled(c, inst)))
    raw = []
    if param == "t":
        ts = [int(v) for v in grid]
        if min(ts) < 1:
            raise ConfigError("t grid values must be >= 1")
        horizon = -(-max(ts) // cfg.tau) * cfg.tau
        traces = [planner_trace(inst, x, c.weights(), horizon, c.tau, rho, c.failure_rate, c.seed)
                  for c, inst, x in setups]
        for t in ts:
            raw.append((float(t), [(tr.processed[t - 1], tr.volume[t - 1] / max(tr.n_links, 1),
                                    tr.est_loss[t - 1], tr.rates[t - 1]) for tr in traces], ""))
    else:
        field_name = "beta_e" if param == "beta" else "gamma_e"
        for v in grid:
            try:
                vals = []
                for c, inst, x in setups:
                    tr = planner_trace(inst, x, replace(c.weights(), **{field_name: float(v)}), c.T, c.tau, rho,
                                       c.failure_rate, c.seed)
                    vals.append((tr.processed.mean(), tr.volume.sum() / max(tr.n_links, 1),
                                 tr.est_loss.mean(), tr.rates.mean()))
                raw.append((float(v), vals, ""))
            except D2DFLError as e:
                raw.append((float(v), [], str(e)))
    means = [np.mean(vals, axis=0) if vals else np.full(4, np.nan) for _, vals, _ in raw]
    finite = [m[2] for m in means if np.isfinite(m[2])]
    scale = max(finite) if finite and max(finite) > 0 else 1.0
    return [SweepRow(v, float(m[0]), float(m[1]), float(m[2] / scale), float(m[3]), err)
            for (v, _, err), m in zip(raw, means)]


def write_sweep_csv(rows: Sequence[SweepRow], param: str, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow((param, "processed_per_sampled", "offloaded_per_link", "normalized_loss",
                    "active_link_rate", "error"))
        for r in rows:
            w.writerow([repr(r.value), repr(r.processed_per_sampled), repr(r.offloaded_per_link),
                        repr(r.normalized_loss), repr(r.active_link_rate), r.error])
