"""Reference samplers and the cheapest-link greedy offloader."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._seeding import derive_rng
from .errors import ConfigError
from .network import DeviceProfile, Topology, tx_cost_matrix
from .offload.plan import OffloadPlan
from .similarity import SimilarityState


def _as_vector(idx, n: int) -> np.ndarray:
    x = np.zeros(n, dtype=bool)
    x[np.asarray(idx, dtype=np.int64)] = True
    return x


def _check_budget(S: int, n: int) -> None:
    if not 1 <= S <= n:
        raise ConfigError(f"sampling budget S={S} must lie in [1, {n}]")


def proportional_sample(weights, S: int, rng: np.random.Generator) -> np.ndarray:
    """S draws without replacement with probability proportional to ``weights``.

    Falls back to uniform selection if all weights are zero; if fewer than S
    entries are positive, the remainder is filled uniformly from the rest.
    """
    w = np.clip(np.asarray(weights, dtype=np.float64), 0.0, None)
    n = len(w)
    _check_budget(S, n)
    if w.sum() <= 0:
        return _as_vector(rng.choice(n, size=S, replace=False), n)
    k = min(S, int((w > 0).sum()))
    chosen = list(rng.choice(n, size=k, replace=False, p=w / w.sum()))
    if k < S:
        rest = np.setdiff1d(np.arange(n), chosen)
        chosen += list(rng.choice(rest, size=S - k, replace=False))
    return _as_vector(chosen, n)


def sample_dpp(data_sizes, S: int, seed: int) -> np.ndarray:
    """Data-proportional sampling."""
    return proportional_sample(data_sizes, S, derive_rng(seed, "dpp"))


def sample_poc(losses, S: int, rng: np.random.Generator) -> np.ndarray:
    """Loss-proportional sampling: higher local loss, higher chance."""
    return proportional_sample(losses, S, rng)


def sample_pyr(utility, counts, S: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Exploit the ``ceil(ratio*S)`` best recent performers, explore the rest.

    ``utility`` is the last-round loss decrease (``None`` before any history,
    giving a uniform draw); ``counts`` holds how often each device was
    sampled. Explorers come uniformly from the least-sampled devices.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError("pyr ratio must lie in [0, 1]")
    counts = np.asarray(counts)
    n = len(counts)
    _check_budget(S, n)
    if utility is None:
        return _as_vector(rng.choice(n, size=S, replace=False), n)
    u = np.asarray(utility, dtype=np.float64)
    n_exploit = min(S, math.ceil(ratio * S - 1e-12))
    order = sorted(range(n), key=lambda i: (-u[i], i))
    exploit = order[:n_exploit]
    chosen = set(exploit)
    need = S - n_exploit
    explore: list[int] = []
    if need:
        rest = np.array([i for i in range(n) if i not in chosen])
        for level in np.unique(counts[rest]):
            tier = rest[counts[rest] == level]
            take = min(need - len(explore), len(tier))
            explore += list(rng.choice(tier, size=take, replace=False))
            if len(explore) == need:
                break
    return _as_vector(exploit + explore, n)


@dataclass(frozen=True)
class BaselineConfig:
    method: str = "dpp"
    pyr_ratio: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("dpp", "poc", "pyr", "all-nodes"):
            raise ConfigError(f"unknown baseline {self.method!r}")
        if not 0.0 <= self.pyr_ratio <= 1.0:
            raise ConfigError("pyr_ratio must lie in [0, 1]")


@dataclass
class SamplingContext:
    """What a sampler may look at when (re)selecting devices."""

    k: int
    data_sizes: np.ndarray
    losses: np.ndarray | None = None
    prev_losses: np.ndarray | None = None
    counts: np.ndarray | None = None


@dataclass
class BaselineSampler:
    """Stateful wrapper: DPP and all-nodes select once, PoC and PYR every round."""

    cfg: BaselineConfig
    S: int
    _rng: np.random.Generator | None = field(default=None, repr=False)

    @property
    def resamples(self) -> bool:
        return self.cfg.method in ("poc", "pyr")

    def select(self, ctx: SamplingContext) -> np.ndarray:
        n = len(ctx.data_sizes)
        if self._rng is None:
            self._rng = derive_rng(self.cfg.seed, "baseline", self.cfg.method)
        m = self.cfg.method
        if m == "all-nodes":
            return np.ones(n, dtype=bool)
        if m == "dpp":
            return sample_dpp(ctx.data_sizes, self.S, self.cfg.seed)
        if m == "poc":
            return sample_poc(ctx.losses if ctx.losses is not None else np.ones(n), self.S, self._rng)
        utility = None
        if ctx.k > 0 and ctx.losses is not None and ctx.prev_losses is not None:
            utility = ctx.prev_losses - ctx.losses
        counts = ctx.counts if ctx.counts is not None else np.zeros(n)
        return sample_pyr(utility, counts, self.S, self.cfg.pyr_ratio, self._rng)


def greedy_offload(sampled, profiles: Sequence[DeviceProfile], topo: Topology,
                   target_volume: float, similarity: SimilarityState, eligible: np.ndarray,
                   data_totals, t: int = 0) -> OffloadPlan:
    """Fill the cheapest matched pairs first until ``target_volume`` datapoints move.

    Pairs are ranked by transmit energy per datapoint moved, then by link
    cost, then by index. Receiver processing capacity and sender transmit
    budgets are respected using raw (undiscounted) volumes.
    """
    x = np.asarray(sampled, dtype=bool)
    ratios = np.zeros(similarity.n_pairs)
    plan_args = (similarity.pair_src, similarity.pair_dst, similarity.pair_src_cluster,
                 similarity.pair_dst_cluster, similarity.n)
    if target_volume <= 0 or similarity.n_pairs == 0:
        return OffloadPlan(t, ratios, *plan_args)
    totals = np.asarray(data_totals, dtype=np.float64)
    psi = tx_cost_matrix(profiles)
    ps, pd, sc = similarity.pair_src, similarity.pair_dst, similarity.pair_src_cluster
    elig = eligible[ps, sc]
    ok = x[pd] & ~x[ps] & (topo.adjacency[ps, pd] > 0) & (elig > 0)
    cand = np.flatnonzero(ok)
    energy = totals[ps] * psi[ps, pd]
    per_point = np.where(elig > 0, energy / np.where(elig > 0, elig, 1.0), np.inf)
    order = sorted(cand, key=lambda p: (per_point[p], psi[ps[p], pd[p]], p))

    cap = np.array([max(0.0, pr.capacity_datapoints() - totals[i]) for i, pr in enumerate(profiles)])
    budget = np.array([pr.tx_budget for pr in profiles], dtype=np.float64)
    sent = np.zeros_like(eligible, dtype=np.float64)
    remaining = float(target_volume)
    for p in order:
        if remaining <= 1e-12:
            break
        k, i = ps[p], pd[p]
        avail = elig[p] - sent[k, sc[p]]
        if avail <= 0 or energy[p] <= 0:
            continue
        phi = min(1.0, remaining / elig[p], cap[i] / elig[p], budget[k] / energy[p],
                  avail / elig[p])
        if phi <= 0:
            continue
        ratios[p] = phi
        vol = phi * elig[p]
        remaining -= vol
        cap[i] -= vol
        budget[k] -= phi * energy[p]
        sent[k, sc[p]] += vol
    return OffloadPlan(t, ratios, *plan_args)
