"""Objective weights and named cost regimes."""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights on the loss, processing-energy and offloading-energy terms.

    ``kappa`` is the statistical constant of the per-device gradient-noise
    term, not an energy weight.
    """

    alpha: float = 100.0
    beta_e: float = 0.001
    gamma_e: float = 0.01
    kappa: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta_e", "gamma_e", "kappa"):
            v = getattr(self, name)
            if not v >= 0:
                raise ConfigError(f"{name} must be >= 0, got {v}")


PRESETS = {
    "balanced": ObjectiveWeights(alpha=100.0, beta_e=0.001, gamma_e=0.01),
    "high-energy": ObjectiveWeights(alpha=100.0, beta_e=0.01, gamma_e=0.1),
}


def preset(name: str, kappa: float = 1.0) -> ObjectiveWeights:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown regime {name!r}; choose from {sorted(PRESETS)}") from None
    return ObjectiveWeights(base.alpha, base.beta_e, base.gamma_e, kappa)
