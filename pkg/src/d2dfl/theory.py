"""Convergence diagnostics for sampled FedL on the convex (logistic) model.

The trace runner simulates the virtual sampled average ``w_S(t)`` and the
centralized reference ``v_k(t)`` restarted at every synchronization, then
compares their gap with the analytic bound built from ``zeta`` and the
per-device gradient-dissimilarity terms ``delta_i``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import LocalDataset
from .errors import ConfigError
from .fedl import global_loss, train_centralized_reference, weighted_gradient
from .models import LogisticModel


def _sizes(datasets: Sequence[LocalDataset]) -> np.ndarray:
    return np.array([len(d) for d in datasets], dtype=np.float64)


def _pooled(datasets: Sequence[LocalDataset]):
    nonempty = [d for d in datasets if len(d)]
    if not nonempty:
        raise ConfigError("need at least one datapoint")
    return np.concatenate([d.X for d in nonempty]), np.concatenate([d.y for d in nonempty])


def compute_zeta(model, w, sampled: Sequence[LocalDataset], datasets: Sequence[LocalDataset]) -> np.ndarray:
    """Sampled weighted gradient minus the full-network weighted gradient at ``w``."""
    if _sizes(sampled).sum() == 0 or _sizes(datasets).sum() == 0:
        raise ConfigError("zeta needs nonempty sampled and global data")
    return weighted_gradient(model, w, sampled) - weighted_gradient(model, w, datasets)


def compute_delta_i(model, w, device: LocalDataset, sampled: Sequence[LocalDataset],
                    datasets: Sequence[LocalDataset], kappa: float) -> float:
    """Upper estimate of ``||grad F_i(w) - grad F_N(w) - zeta(w)||`` for a sampled device.

    ``((D_N - D_S)/D_N) * ||gbar_S|| + kappa/sqrt(D_i) + ||C||`` where ``gbar_S``
    is the sampled weighted gradient and ``C`` the unsampled gradient mass
    divided by ``D_N``. ``sampled`` must be a sub-list (by identity) of
    ``datasets``.
    """
    if len(device) == 0:
        raise ConfigError("delta_i is undefined for a device without data")
    d_n = _sizes(datasets).sum()
    d_s = _sizes(sampled).sum()
    gbar = weighted_gradient(model, w, sampled)
    ids = {id(d) for d in sampled}
    c = np.zeros(model.n_params)
    for d in datasets:
        if id(d) not in ids and len(d):
            c += len(d) * model.grad(w, d.X, d.y)
    c /= d_n
    return float((d_n - d_s) / d_n * np.linalg.norm(gbar) + kappa / math.sqrt(len(device))
                 + np.linalg.norm(c))


def delta_gap_lhs(model, w, device: LocalDataset, sampled, datasets) -> float:
    """Measured left side ``||grad F_i(w) - grad F_S(w)||`` that ``delta_i`` bounds."""
    return float(np.linalg.norm(model.grad(w, device.X, device.y) - weighted_gradient(model, w, sampled)))


def delta_S(deltas: Sequence[float], sizes: Sequence[float]) -> float:
    sizes = np.asarray(sizes, dtype=np.float64)
    return float(np.dot(deltas, sizes) / sizes.sum())


def delta_uniform_gap(deltas: Sequence[float], sizes: Sequence[float]) -> float:
    """Relative difference between the weighted ``delta_S`` and the plain mean."""
    weighted = delta_S(deltas, sizes)
    uniform = float(np.mean(deltas))
    if weighted == 0:
        return 0.0 if uniform == 0 else math.inf
    return abs(weighted - uniform) / abs(weighted)


def theorem1_bound(delta_s: Sequence[float], zeta_norms: Sequence[float], beta: float,
                   t: int, k: int, tau: int) -> float:
    """Gap bound at ``t`` inside period ``k`` (1-based, covering ``((k-1)tau, k*tau]``).

    ``delta_s[y]`` is evaluated at ``w_S(y)`` and ``zeta_norms[y]`` at ``w_S(y)``;
    the sum pairs step ``y`` with ``zeta_norms[y-1]``.
    """
    start = (k - 1) * tau
    if not start <= t <= k * tau:
        raise ConfigError(f"t={t} lies outside period {k}")
    total = 0.0
    for y in range(start + 1, t + 1):
        total += delta_s[y] * (2.0 ** (y - 1 - start) - 1.0) + zeta_norms[y - 1]
    return total / beta


@dataclass(frozen=True)
class CorollaryValue:
    g: float
    taylor: float
    relative_gap: float
    vacuous: bool


def corollary1(t: int, k_hat: int, upsilon_hat: float, xi: float, eta: float, beta: float,
               lipschitz: float, epsilon: float) -> CorollaryValue:
    """Loss-gap bound ``g`` and its two-term expansion in ``upsilon_hat``.

    A nonpositive denominator yields ``g = inf`` with ``vacuous=True``.
    """
    a = t * xi * eta * (1.0 - beta * eta / 2.0)
    b = (k_hat + 1) * lipschitz / (beta * epsilon ** 2) * upsilon_hat
    taylor = 1.0 / a + b / a ** 2 if a > 0 else math.inf
    den = a - b
    if den <= 0:
        return CorollaryValue(math.inf, taylor, math.inf, True)
    g = 1.0 / den
    return CorollaryValue(g, taylor, abs(g - taylor) / g, False)


def corollary1_bound_and_taylor(trace: "BoundTrace", t: int) -> tuple[float, float, float]:
    """``(g, taylor, relative gap)`` recorded by :func:`run_bound_trace` at step ``t``."""
    if t not in trace.t:
        raise ConfigError(f"step {t} is not in the trace")
    i = trace.t.index(t)
    g, taylor = trace.g[i], trace.taylor_g[i]
    gap = abs(g - taylor) / g if math.isfinite(g) and g > 0 else math.inf
    return g, taylor, gap


def smoothness_bound(datasets: Sequence[LocalDataset]) -> float:
    """Smoothness constant valid for every local loss and the global loss.

    The softmax cross-entropy Hessian in the logits is bounded by I/2, so a
    mean loss over points ``x`` is ``0.5 * lambda_max(E[x~ x~^T])``-smooth with
    ``x~ = [x, 1]``. The largest value over devices and the pooled data is
    returned.
    """
    best = 0.0
    pools = [d for d in datasets if len(d)]
    for X in [d.X for d in pools] + [_pooled(datasets)[0]]:
        Xa = np.hstack([X, np.ones((len(X), 1))])
        best = max(best, 0.5 * float(np.linalg.eigvalsh(Xa.T @ Xa / len(X))[-1]))
    return best


def lipschitz_bound(datasets: Sequence[LocalDataset]) -> float:
    """Per-sample gradient norm bound ``sqrt(2) * max ||[x, 1]||``."""
    X = _pooled(datasets)[0]
    return math.sqrt(2.0) * float(np.sqrt((X ** 2).sum(axis=1) + 1.0).max())


def kappa_estimate(model, w, datasets: Sequence[LocalDataset], z: float = 3.0) -> float:
    """``z`` times the RMS deviation of per-sample gradients from the global mean."""
    X, y = _pooled(datasets)
    G = model.per_sample_grads(w, X, y)
    dev = G - G.mean(axis=0)
    return z * float(np.sqrt((dev ** 2).sum(axis=1).mean()))


@dataclass
class BoundTrace:
    t: list = field(default_factory=list)
    k: list = field(default_factory=list)
    measured_gap: list = field(default_factory=list)
    bound: list = field(default_factory=list)
    delta_S: list = field(default_factory=list)
    zeta_norm: list = field(default_factory=list)
    upsilon: list = field(default_factory=list)
    g: list = field(default_factory=list)
    taylor_g: list = field(default_factory=list)
    loss_gap: list = field(default_factory=list)
    beta: float = 0.0
    lipschitz: float = 0.0
    kappa: float = 0.0
    xi: float = 0.0
    epsilon: float = 0.0
    delta_uniform_gap: float = 0.0

    def violations(self, rtol: float = 1e-12) -> int:
        return int(sum(m > b * (1 + rtol) + 1e-15 for m, b in zip(self.measured_gap, self.bound)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["t", "k", "measured_gap", "bound", "delta_S", "zeta_norm", "g", "taylor_g"])
            for row in zip(self.t, self.k, self.measured_gap, self.bound, self.delta_S,
                           self.zeta_norm, self.g, self.taylor_g):
                w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])


def run_bound_trace(datasets: Sequence[LocalDataset], sampled_idx: Sequence[int], n_classes: int,
                    tau: int = 5, T: int = 20, eta: float | None = None, kappa: float | None = None,
                    reference_steps: int = 3000, w0=None) -> BoundTrace:
    """Simulate sampled FedL on the logistic model and record bound quantities per step.

    ``eta`` defaults to ``1/beta``; a larger value violates the hypothesis
    and raises. ``w*`` comes from ``reference_steps`` of centralized descent.
    """
    if T % tau:
        raise ConfigError("T must be a multiple of tau")
    sampled = [datasets[i] for i in sampled_idx]
    if any(len(d) == 0 for d in sampled):
        raise ConfigError("sampled devices need data")
    dim = _pooled(datasets)[0].shape[1]
    model = LogisticModel(dim, n_classes)
    beta = smoothness_bound(datasets)
    eta = 1.0 / beta if eta is None else eta
    if eta > 1.0 / beta * (1 + 1e-12):
        raise ConfigError("eta must not exceed 1/beta")
    lip = lipschitz_bound(datasets)
    w = model.init() if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    kap = kappa_estimate(model, w, datasets) if kappa is None else kappa
    sizes_s = _sizes(sampled)

    w_star = train_centralized_reference(model, w, datasets, 1.0 / beta, reference_steps)[-1]
    f_star = global_loss(model, w_star, datasets)

    def stats(wv):
        deltas = [compute_delta_i(model, wv, d, sampled, datasets, kap) for d in sampled]
        return deltas, float(np.linalg.norm(compute_zeta(model, wv, sampled, datasets)))

    tr = BoundTrace(beta=beta, lipschitz=lip, kappa=kap)
    locals_ = [w.copy() for _ in sampled]
    ws = w.copy()
    d0, z0 = stats(ws)
    ds_seq, z_seq = [delta_S(d0, sizes_s)], [z0]
    tr.delta_uniform_gap = delta_uniform_gap(d0, sizes_s)
    v = ws.copy()
    sync_dist = []
    for t in range(1, T + 1):
        k = (t - 1) // tau + 1
        if (t - 1) % tau == 0:
            v = ws.copy()
            locals_ = [ws.copy() for _ in sampled]
            sync_dist.append(float(np.linalg.norm(ws - w_star)))
        locals_ = [wi - eta * model.grad(wi, d.X, d.y) for wi, d in zip(locals_, sampled)]
        ws = sum(s * wi for s, wi in zip(sizes_s, locals_)) / sizes_s.sum()
        v = v - eta * weighted_gradient(model, v, datasets)
        dl, zn = stats(ws)
        ds_seq.append(delta_S(dl, sizes_s))
        z_seq.append(zn)
        tr.t.append(t)
        tr.k.append(k)
        tr.measured_gap.append(float(np.linalg.norm(ws - v)))
        tr.bound.append(theorem1_bound(ds_seq, z_seq, beta, t, k, tau))
        tr.delta_S.append(ds_seq[-1])
        tr.zeta_norm.append(zn)
        start = (k - 1) * tau
        tr.upsilon.append(ds_seq[t] * (2.0 ** (t - 1 - start) - 1.0))
        tr.loss_gap.append(global_loss(model, ws, datasets) - f_star)

    tr.xi = min(1.0 / max(d, 1e-300) ** 2 for d in sync_dist)
    positive = [g for g in tr.loss_gap if g > 0]
    tr.epsilon = 0.5 * min(positive) if positive else 1e-12
    for i, t in enumerate(tr.t):
        k_hat = t // tau
        lo = max(0, i - tau + 1)
        ups_hat = sum(tr.upsilon[j] + tr.zeta_norm[j] for j in range(lo, i + 1))
        c = corollary1(t, k_hat, ups_hat, tr.xi, eta, beta, lip, tr.epsilon)
        tr.g.append(c.g)
        tr.taylor_g.append(c.taylor)
    return tr
