"""Two-layer graph convolutional scorer and percentile-filtered node selection."""
from __future__ import annotations

import itertools
import logging
import math
import struct
import warnings
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._seeding import derive_rng, derive_seed
from .errors import ConfigError, EnumerationTooLargeError, InfeasibleStartWarning

log = logging.getLogger(__name__)

U_FEATURES = 4
DEFAULT_HIDDEN = 16
MAX_ENUMERATION_N = 12


def node_features(data_sizes, profiles) -> np.ndarray:
    """Columns (data size, capacity, unit cost, receive buffer), each scaled to [0, 1]."""
    raw = np.column_stack([
        np.asarray(data_sizes, dtype=np.float64),
        [p.proc_capacity for p in profiles],
        [p.proc_unit_cost for p in profiles],
        [p.recv_buffer for p in profiles],
    ])
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (raw - lo) / span


def augmented_adjacency(big_lambda) -> np.ndarray:
    L = np.asarray(big_lambda, dtype=np.float64)
    return L + np.eye(L.shape[0])


def normalized_adjacency(aug_adj) -> np.ndarray:
    A = np.asarray(aug_adj, dtype=np.float64)
    d = A.sum(axis=1)
    s = 1.0 / np.sqrt(d)
    return s[:, None] * A * s[None, :]


@dataclass
class GcnModel:
    q1: np.ndarray
    q2: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.q1.shape[1]

    @classmethod
    def init(cls, seed: int, hidden: int = DEFAULT_HIDDEN, n_features: int = U_FEATURES) -> "GcnModel":
        rng = derive_rng(seed, "gcn-init")
        return cls(rng.uniform(-0.1, 0.1, (n_features, hidden)), rng.uniform(-0.1, 0.1, (hidden, 1)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.q1.ravel(), self.q2.ravel()])

    @classmethod
    def from_flat(cls, w, n_features: int, hidden: int) -> "GcnModel":
        w = np.asarray(w, dtype=np.float64)
        k = n_features * hidden
        return cls(w[:k].reshape(n_features, hidden).copy(), w[k:k + hidden].reshape(hidden, 1).copy())

    def save(self, path) -> None:
        body = np.ascontiguousarray(self.flat(), dtype="<f8").tobytes()
        header = struct.pack("<4sIII", b"GCNW", self.q1.shape[0], self.hidden_dim, zlib.crc32(body))
        Path(path).write_bytes(header + body)

    @classmethod
    def load(cls, path) -> "GcnModel":
        raw = Path(path).read_bytes()
        magic, u, o, crc = struct.unpack_from("<4sIII", raw)
        body = raw[16:]
        if magic != b"GCNW" or len(body) != 8 * (u * o + o) or zlib.crc32(body) != crc:
            raise ConfigError(f"{path}: invalid or corrupt GCN weight file")
        return cls.from_flat(np.frombuffer(body, dtype="<f8"), u, o)


def _logits(model: GcnModel, features, aug_adj):
    Ah = normalized_adjacency(aug_adj)
    AX = Ah @ np.asarray(features, dtype=np.float64)
    Z1 = AX @ model.q1
    H1 = np.maximum(Z1, 0.0)
    AH = Ah @ H1
    z = (AH @ model.q2)[:, 0]
    return z, (Ah, AX, Z1, AH)


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def gcn_forward(model: GcnModel, features, aug_adj) -> np.ndarray:
    """Node-selection probabilities (softmax over nodes of the second layer)."""
    return _softmax(_logits(model, features, aug_adj)[0])


def transfer_to_larger_network(model: GcnModel, features, aug_adj) -> np.ndarray:
    """Weights depend only on feature and hidden sizes, so any N works unchanged."""
    return gcn_forward(model, features, aug_adj)


@dataclass(frozen=True, eq=False)
class TrainingRealization:
    features: np.ndarray
    aug_adj: np.ndarray
    label: np.ndarray

    @property
    def target(self) -> np.ndarray:
        lab = np.asarray(self.label, dtype=np.float64)
        return lab / lab.sum()


def realization_loss_and_grad(model: GcnModel, r: TrainingRealization):
    """Cross-entropy against the uniform distribution over the labelled set."""
    z, (Ah, AX, Z1, AH) = _logits(model, r.features, r.aug_adj)
    m = z.max()
    logp = z - m - math.log(np.exp(z - m).sum())
    y = r.target
    loss = float(-(y * logp).sum())
    dz = np.exp(logp) - y
    g2 = AH.T @ dz[:, None]
    dH1 = Ah.T @ (dz[:, None] @ model.q2.T)
    dZ1 = dH1 * (Z1 > 0)
    g1 = AX.T @ dZ1
    return loss, g1, g2


def dataset_loss(model: GcnModel, realizations: Sequence[TrainingRealization]) -> float:
    return float(np.mean([realization_loss_and_grad(model, r)[0] for r in realizations]))


def train_gcn(realizations: Sequence[TrainingRealization], epochs: int = 500, lr: float = 0.5,
              seed: int = 0, hidden: int = DEFAULT_HIDDEN) -> GcnModel:
    """Full-batch gradient descent on the mean cross-entropy over realizations."""
    if not realizations:
        raise ConfigError("need at least one training realization")
    n = realizations[0].features.shape[0]
    if any(r.features.shape[0] != n for r in realizations):
        raise ConfigError("all realizations must have the same number of nodes")
    model = GcnModel.init(seed, hidden, realizations[0].features.shape[1])
    for _ in range(epochs):
        g1 = np.zeros_like(model.q1)
        g2 = np.zeros_like(model.q2)
        for r in realizations:
            _, a, b = realization_loss_and_grad(model, r)
            g1 += a
            g2 += b
        model.q1 -= lr * g1 / len(realizations)
        model.q2 -= lr * g2 / len(realizations)
    return model


def save_realizations(realizations: Sequence[TrainingRealization], directory) -> None:
    """One sub-directory per realization holding features, aug_adj and label CSVs."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for idx, r in enumerate(realizations):
        d = root / f"{idx:05d}"
        d.mkdir(exist_ok=True)
        np.savetxt(d / "features.csv", r.features, delimiter=",", fmt="%.17g")
        np.savetxt(d / "aug_adj.csv", r.aug_adj, delimiter=",", fmt="%.17g")
        np.savetxt(d / "label.csv", np.asarray(r.label, dtype=np.int64)[None, :], delimiter=",", fmt="%d")


def load_realizations(directory) -> list[TrainingRealization]:
    out = []
    for d in sorted(p for p in Path(directory).iterdir() if p.is_dir()):
        out.append(TrainingRealization(
            np.loadtxt(d / "features.csv", delimiter=",", ndmin=2),
            np.loadtxt(d / "aug_adj.csv", delimiter=",", ndmin=2),
            np.loadtxt(d / "label.csv", delimiter=",", ndmin=1).astype(np.int64)))
    return out


def nearest_rank(values, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if len(v) == 0:
        raise ValueError("percentile of an empty list")
    rank = max(1, math.ceil(pct / 100.0 * len(v) - 1e-12))
    return float(v[rank - 1])


def _best(cands, gamma, sizes) -> int:
    return min(cands, key=lambda j: (-gamma[j], -sizes[j], j))


def gcn_branch(gamma, big_lambda, data_sizes, lam, S: int, data_pct: float = 95.0,
               link_pct: float = 95.0, spread_pct: float = 80.0) -> np.ndarray:
    """Pick S nodes: the best-scored large node first, then dissimilar ones.

    ``big_lambda`` (link dissimilarity) filters candidates against the last
    pick; ``lam`` (all-pairs dissimilarity) gives each candidate's minimum
    distance to the picks so far. If both filters leave nothing the 80th
    percentile filter is dropped, then only it is kept, then the best
    remaining score is taken.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    sizes = np.asarray(data_sizes, dtype=np.float64)
    L = np.asarray(big_lambda, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    n = len(gamma)
    if not 1 <= S <= n:
        raise ConfigError(f"S={S} must lie in [1, {n}]")
    thr = nearest_rank(sizes, data_pct)
    picks = [_best([j for j in range(n) if sizes[j] >= thr], gamma, sizes)]
    while len(picks) < S:
        rest = [j for j in range(n) if j not in picks]
        last = picks[-1]
        link = {j: L[last, j] for j in rest}
        spread = {j: min(lam[s, j] for s in picks) for j in rest}
        lt = nearest_rank(list(link.values()), link_pct)
        st = nearest_rank(list(spread.values()), spread_pct)
        ladder = (
            ("both filters", lambda j: link[j] >= lt and spread[j] >= st),
            ("link filter only", lambda j: link[j] >= lt),
            ("spread filter only", lambda j: spread[j] >= st),
            ("no filter", lambda j: True),
        )
        for step, (name, keep) in enumerate(ladder):
            cands = [j for j in rest if keep(j)]
            if cands:
                if step:
                    log.info("gcn_branch pick %d fell back to %s", len(picks) + 1, name)
                picks.append(_best(cands, gamma, sizes))
                break
    x = np.zeros(n, dtype=bool)
    x[picks] = True
    return x


def enumerate_subsets(n: int, S: int, evaluate: Callable[[np.ndarray], float]):
    """Exhaustively score every S-subset of n nodes and return the best.

    ``evaluate`` maps a boolean sampling vector to its objective. Ties go to
    the lexicographically smallest index tuple. Returns ``(x, objective,
    all_scores)`` where ``all_scores`` is keyed by index tuple.
    """
    if n > MAX_ENUMERATION_N:
        raise EnumerationTooLargeError(
            f"n={n} exceeds {MAX_ENUMERATION_N}; use a trained GCN with gcn_branch instead")
    if not 1 <= S <= n:
        raise ConfigError(f"S={S} must lie in [1, {n}]")
    scores = {}
    for combo in itertools.combinations(range(n), S):
        x = np.zeros(n, dtype=bool)
        x[list(combo)] = True
        scores[combo] = float(evaluate(x))
    best = min(scores, key=lambda c: (scores[c], c))
    x = np.zeros(n, dtype=bool)
    x[list(best)] = True
    return x, scores[best], scores


def _instance_inputs(inst):
    feats = node_features(inst.data_sizes, inst.profiles)
    return feats, augmented_adjacency(inst.similarity.big_lambda)


def sampling_objective(inst, run_cfg=None, seed: int = 0) -> Callable[[np.ndarray], float]:
    """Objective of a sampling vector: offload plus a short training run.

    The returned callable runs the full loop (planner and FedL) for
    ``run_cfg.T`` steps and reports the time-averaged weighted objective.
    """
    from .simulation import FixedSampler, RunConfig, run_simulation

    cfg = run_cfg or RunConfig(T=5, tau=5, eta=0.5)
    cfg = replace(cfg, track_objective=True, check_plans=False)

    def evaluate(x):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", InfeasibleStartWarning)
            return run_simulation(inst, FixedSampler(np.asarray(x, dtype=bool)), cfg, seed).objective()

    return evaluate


def enumerate_best_sampling(inst, S: int, run_cfg=None, seed: int = 0):
    """Best S-subset of an instance's devices under :func:`sampling_objective`.

    Returns ``(x, objective, all_scores)``. Refuses networks above
    ``MAX_ENUMERATION_N`` devices.
    """
    return enumerate_subsets(inst.n, S, sampling_objective(inst, run_cfg, seed))


def make_realization(inst, S: int, run_cfg=None, seed: int = 0):
    """Label an instance with its enumerated optimum; returns ``(realization, scores)``."""
    x, _, scores = enumerate_best_sampling(inst, S, run_cfg, seed)
    feats, adj = _instance_inputs(inst)
    return TrainingRealization(feats, adj, x.astype(np.int64)), scores


def generate_realizations(count: int, S: int, inst_cfg=None, run_cfg=None, seed: int = 0,
                          with_scores: bool = False):
    """Build ``count`` labelled realizations on independently seeded instances."""
    from .simulation import InstanceConfig, build_instance

    base = inst_cfg or InstanceConfig(n=10, link_prob=0.3)
    out, all_scores = [], []
    for e in range(count):
        inst = build_instance(replace(base, seed=derive_seed(seed, "realization", e)))
        r, scores = make_realization(inst, S, run_cfg, seed)
        out.append(r)
        all_scores.append((inst, scores))
    return (out, all_scores) if with_scores else out


def select_sampling(model: GcnModel, inst, S: int) -> np.ndarray:
    """Score an instance's devices with the GCN and run the branch search."""
    feats, adj = _instance_inputs(inst)
    gamma = transfer_to_larger_network(model, feats, adj)
    return gcn_branch(gamma, inst.similarity.big_lambda, inst.data_sizes, inst.similarity.lam, S)


def gcn_sampler(model: GcnModel, inst, S: int):
    """A fixed sampler holding the GCN's choice for ``inst``."""
    from .simulation import FixedSampler

    return FixedSampler(select_sampling(model, inst, S))


def bundled_weights(S: int) -> GcnModel:
    """Pretrained scorer shipped with the package for budget ``S``."""
    path = Path(__file__).parent / "weights" / f"gcn_s{S}.bin"
    if not path.exists():
        raise ConfigError(f"no bundled GCN weights for S={S}; train one with train_gcn")
    return GcnModel.load(path)
