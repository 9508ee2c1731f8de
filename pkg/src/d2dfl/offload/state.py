"""Optimizer-side bookkeeping of data counts and gradient extrapolation."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError
from .weights import ObjectiveWeights


@dataclass(frozen=True, eq=False)
class OptState:
    """Estimated per-device, per-cluster data counts and gradient tracking.

    ``data_counts`` and ``eligible`` are ``(N, K_max)`` arrays; ``eligible``
    holds what each cluster may still send (data goes out at most once).
    ``received`` is the similarity-discounted inflow of the latest step.
    """

    data_counts: np.ndarray
    eligible: np.ndarray
    grad_avg: float
    scale: float = 1.0
    steps_since_sync: int = 0
    received: np.ndarray | None = None

    def __post_init__(self):
        if np.any(self.data_counts < 0) or np.any(self.eligible < 0):
            raise ConfigError("data counts must be nonnegative")
        if self.scale < 1:
            raise ConfigError("gradient scale must be >= 1")

    @classmethod
    def from_counts(cls, counts, grad_avg: float) -> "OptState":
        c = np.asarray(counts, dtype=np.float64)
        return cls(c.copy(), c.copy(), float(grad_avg), 1.0, 0, np.zeros_like(c))

    @property
    def totals(self) -> np.ndarray:
        return self.data_counts.sum(axis=1)

    def extrapolated_gradient(self, steps: int | None = None) -> float:
        s = self.steps_since_sync if steps is None else steps
        return self.grad_avg / self.scale ** s

    def evolve(self, **kw) -> "OptState":
        return replace(self, **kw)


def update_gradient_scale(grad_prev: float, grad_now: float, tau: int) -> float:
    """Per-step decay factor implied by two consecutive aggregation gradients.

    Clamped at 1 so the extrapolated gradient never grows; a vanishing
    current gradient means convergence and also yields 1.
    """
    if grad_now <= 0 or grad_prev <= 0 or not math.isfinite(grad_prev / grad_now):
        return 1.0
    return max(1.0, (grad_prev / grad_now) ** (1.0 / tau))


def surrogate_loss(state, sampled, weights: ObjectiveWeights, grad_norm: float | None = None) -> float:
    """Sampling-gap term plus the mean per-device noise term over sampled devices.

    ``state`` is an :class:`OptState` (its extrapolated gradient is used unless
    ``grad_norm`` is given) or a vector of per-device data totals.
    """
    if isinstance(state, OptState):
        D = state.totals
        if grad_norm is None:
            grad_norm = state.extrapolated_gradient()
    else:
        D = np.asarray(state, dtype=np.float64)
        if grad_norm is None:
            raise ConfigError("grad_norm is required when passing raw data totals")
    x = np.asarray(sampled, dtype=bool)
    Ds = D[x]
    if len(Ds) == 0 or np.any(Ds <= 0):
        raise ConfigError("every sampled device needs data")
    dn = D.sum()
    return float((dn - Ds.sum()) / dn * grad_norm + np.mean(weights.kappa / np.sqrt(Ds)))
