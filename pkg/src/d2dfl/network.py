"""Device resource profiles, directed D2D topology and link failures."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._seeding import derive_rng
from .errors import ConfigError, InvalidNetworkError


@dataclass(frozen=True, eq=False)
class DeviceProfile:
    """Per-device resources for one period.

    ``tx_unit_cost`` maps a neighbour id to the energy spent per datapoint
    sent to it. ``recv_buffer`` is informational and only feeds the sampler.
    """

    id: int
    proc_capacity: float
    proc_unit_cost: float
    tx_budget: float
    tx_unit_cost: Mapping[int, float] = field(default_factory=dict)
    recv_buffer: float = 0.0

    def __post_init__(self):
        if not self.proc_capacity >= 0:
            raise ConfigError(f"device {self.id}: proc_capacity must be >= 0")
        if not self.proc_unit_cost >= 0:
            raise ConfigError(f"device {self.id}: proc_unit_cost must be >= 0")
        if not self.tx_budget > 0:
            raise ConfigError(f"device {self.id}: tx_budget must be > 0")
        for j, c in self.tx_unit_cost.items():
            if not c > 0:
                raise ConfigError(f"device {self.id}: tx cost to {j} must be > 0")
        if not self.recv_buffer >= 0:
            raise ConfigError(f"device {self.id}: recv_buffer must be >= 0")

    def tx_cost(self, j: int) -> float:
        return float(self.tx_unit_cost[j])

    def capacity_datapoints(self) -> float:
        """Largest dataset this device can process in one period."""
        if self.proc_unit_cost == 0:
            return math.inf
        return self.proc_capacity / self.proc_unit_cost

    def __eq__(self, other):
        if not isinstance(other, DeviceProfile):
            return NotImplemented
        return (
            self.id == other.id
            and self.proc_capacity == other.proc_capacity
            and self.proc_unit_cost == other.proc_unit_cost
            and self.tx_budget == other.tx_budget
            and dict(self.tx_unit_cost) == dict(other.tx_unit_cost)
            and self.recv_buffer == other.recv_buffer
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Topology:
    """Directed adjacency; ``adjacency[i, j] == 1`` means i may send to j."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise InvalidNetworkError("adjacency must be a square matrix")
        if not np.isin(adj, (0, 1)).all():
            raise InvalidNetworkError("adjacency entries must be 0 or 1")
        if np.any(np.diag(adj) != 0):
            raise InvalidNetworkError("self-loops are not allowed")
        adj = adj.astype(np.int8, copy=True)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_links(self) -> int:
        return int(self.adjacency.sum())

    def edges(self) -> list[tuple[int, int]]:
        src, dst = np.nonzero(self.adjacency)
        return list(zip(src.tolist(), dst.tolist()))

    def out_neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def in_neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[:, i])

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency)

    __hash__ = None

    def write_edge_list(self, path) -> None:
        lines = [f"# n={self.n}"] + [f"{i} {j}" for i, j in self.edges()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_edge_list(cls, path, n: int | None = None) -> "Topology":
        pairs = []
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("n=") and n is None:
                    n = int(body[2:])
                continue
            i, j = line.split()
            pairs.append((int(i), int(j)))
        if n is None:
            n = 1 + max((max(p) for p in pairs), default=-1)
        adj = np.zeros((n, n), dtype=np.int8)
        for i, j in pairs:
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidNetworkError(f"edge ({i}, {j}) out of range for n={n}")
            adj[i, j] = 1
        return cls(adj)


def generate_erdos_renyi(n: int, p: float, seed: int, symmetric: bool = False) -> Topology:
    """Directed G(n, p): every ordered pair i != j is a link with probability p.

    With ``symmetric=True`` each unordered pair is drawn once and used in both
    directions.
    """
    if n < 2:
        raise InvalidNetworkError(f"need at least 2 devices, got n={n}")
    if not 0.0 <= p <= 1.0:
        raise InvalidNetworkError(f"link probability must be in [0, 1], got {p}")
    u = derive_rng(seed, "erdos-renyi").random((n, n))
    adj = u < p
    if symmetric:
        upper = np.triu(adj, 1)
        adj = upper | upper.T
    np.fill_diagonal(adj, False)
    return Topology(adj.astype(np.int8))


@dataclass(frozen=True)
class LinkFailureConfig:
    failure_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ConfigError(f"failure_rate must be in [0, 1], got {self.failure_rate}")


def apply_link_failures(topo: Topology, cfg: LinkFailureConfig, t: int) -> Topology:
    """Drop each existing link independently with probability ``failure_rate``.

    The draw depends only on ``(cfg.seed, t)``; the input is left untouched.
    """
    keep = derive_rng(cfg.seed, "link-failure", t).random(topo.adjacency.shape) >= cfg.failure_rate
    return Topology((topo.adjacency.astype(bool) & keep).astype(np.int8))


Range = tuple[float, float]


@dataclass(frozen=True)
class ResourceRanges:
    """Uniform sampling ranges for every profile field.

    Defaults suit devices holding about 100 datapoints: processing capacity
    leaves a headroom of roughly 50 to 150 points, and transmit budgets cover
    only a fraction of a neighbour's data per period.
    """

    proc_capacity: Range = (150.0, 250.0)
    proc_unit_cost: Range = (1.0, 1.1)
    tx_budget: Range = (2.0, 6.0)
    tx_unit_cost: Range = (0.01, 0.1)
    recv_buffer: Range = (50.0, 200.0)

    def __post_init__(self):
        for name in ("proc_capacity", "proc_unit_cost", "tx_budget", "tx_unit_cost", "recv_buffer"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            if lo < 0:
                raise ConfigError(f"{name}: bounds must be nonnegative")
        if self.tx_unit_cost[0] <= 0:
            raise ConfigError("tx_unit_cost lower bound must be > 0")
        if self.tx_budget[0] <= 0:
            raise ConfigError("tx_budget lower bound must be > 0")

    @classmethod
    def from_load(cls, nominal_max: float, load: Range = (0.25, 0.75), **kw) -> "ResourceRanges":
        """Processing capacity drawn between ``load`` fractions of a nominal maximum."""
        return cls(proc_capacity=(load[0] * nominal_max, load[1] * nominal_max), **kw)


def _uniform(rng: np.random.Generator, bounds: Range, size=None):
    lo, hi = bounds
    if lo == hi:
        return np.full(size, float(lo)) if size is not None else float(lo)
    return rng.uniform(lo, hi, size)


def sample_device_profiles(n: int, ranges: ResourceRanges, seed: int) -> list[DeviceProfile]:
    """Draw ``n`` profiles; tx costs are drawn toward every other device."""
    if n < 1:
        raise ConfigError("need at least one device")
    rng = derive_rng(seed, "device-profiles")
    caps = _uniform(rng, ranges.proc_capacity, n)
    units = _uniform(rng, ranges.proc_unit_cost, n)
    budgets = _uniform(rng, ranges.tx_budget, n)
    psi = _uniform(rng, ranges.tx_unit_cost, (n, n))
    buffers = _uniform(rng, ranges.recv_buffer, n)
    return [
        DeviceProfile(
            id=i,
            proc_capacity=float(caps[i]),
            proc_unit_cost=float(units[i]),
            tx_budget=float(budgets[i]),
            tx_unit_cost={j: float(psi[i, j]) for j in range(n) if j != i},
            recv_buffer=float(buffers[i]),
        )
        for i in range(n)
    ]


@dataclass(frozen=True)
class ResourceSchedule:
    """Per-period multipliers on the profile fields, cycled over periods.

    Each entry maps a field name to a factor; missing fields keep factor 1.
    An empty schedule leaves resources constant in time.
    """

    multipliers: Sequence[Mapping[str, float]] = ()

    _FIELDS = ("proc_capacity", "proc_unit_cost", "tx_budget", "tx_unit_cost", "recv_buffer")

    def __post_init__(self):
        for m in self.multipliers:
            for k, v in m.items():
                if k not in self._FIELDS:
                    raise ConfigError(f"unknown schedule field {k!r}")
                if not v > 0:
                    raise ConfigError(f"schedule factor for {k} must be > 0")

    def at(self, profiles: Sequence[DeviceProfile], t: int) -> list[DeviceProfile]:
        if not self.multipliers:
            return list(profiles)
        m = self.multipliers[t % len(self.multipliers)]
        psi = m.get("tx_unit_cost", 1.0)
        return [
            replace(
                p,
                proc_capacity=p.proc_capacity * m.get("proc_capacity", 1.0),
                proc_unit_cost=p.proc_unit_cost * m.get("proc_unit_cost", 1.0),
                tx_budget=p.tx_budget * m.get("tx_budget", 1.0),
                tx_unit_cost={j: c * psi for j, c in p.tx_unit_cost.items()},
                recv_buffer=p.recv_buffer * m.get("recv_buffer", 1.0),
            )
            for p in profiles
        ]


def tx_cost_matrix(profiles: Sequence[DeviceProfile]) -> np.ndarray:
    """Dense matrix of per-datapoint tx costs; zero where no cost is defined."""
    n = len(profiles)
    out = np.zeros((n, n))
    for p in profiles:
        for j, c in p.tx_unit_cost.items():
            if 0 <= j < n:
                out[p.id, j] = c
    return out
