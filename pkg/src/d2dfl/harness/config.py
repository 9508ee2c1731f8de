"""Experiment configuration and its TOML schema.

Every table and key below is optional; anything not listed is rejected.

    [network]   n, link_prob, seed, symmetric
    [data]      n_classes, n_per_class, dim, spread, separation, test_fraction, path
    [partition] labels_per_device, mean_size, variance_factor
    [train]     T, tau, eta, model, hidden
    [weights]   regime, alpha, beta_e, gamma_e, kappa
    [sampling]  method, S, pyr_ratio, gcn_weights
    [offload]   enabled, failure_rate
    [feddrop]   rate
    [output]    dir
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..offload import ObjectiveWeights, preset

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SAMPLERS = ("ours", "dpp", "poc", "pyr", "all-nodes")

SCHEMA = {
    "network": {"n": "n", "link_prob": "link_prob", "seed": "seed", "symmetric": "symmetric"},
    "data": {"n_classes": "n_classes", "n_per_class": "n_per_class", "dim": "dim", "spread": "spread",
             "separation": "separation", "test_fraction": "test_fraction", "path": "data_path"},
    "partition": {"labels_per_device": "labels_per_device", "mean_size": "mean_size",
                  "variance_factor": "variance_factor"},
    "train": {"T": "T", "tau": "tau", "eta": "eta", "model": "model", "hidden": "hidden"},
    "weights": {"regime": "regime", "alpha": "alpha", "beta_e": "beta_e", "gamma_e": "gamma_e",
                "kappa": "kappa"},
    "sampling": {"method": "sampler", "S": "S", "pyr_ratio": "pyr_ratio", "gcn_weights": "gcn_weights"},
    "offload": {"enabled": "offload", "failure_rate": "failure_rate"},
    "feddrop": {"rate": "feddrop_rate"},
    "output": {"dir": "out_dir"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 20
    link_prob: float = 0.1
    seed: int = 0
    symmetric: bool = False
    n_classes: int = 10
    n_per_class: int = 400
    dim: int = 8
    spread: float = 1.0
    separation: float = 4.0
    test_fraction: float = 0.2
    data_path: str = ""
    labels_per_device: int = 3
    mean_size: float = 100.0
    variance_factor: float = 0.2
    T: int = 50
    tau: int = 5
    eta: float = 2.0
    model: str = "logistic"
    hidden: int = 32
    regime: str = "balanced"
    alpha: float | None = None
    beta_e: float | None = None
    gamma_e: float | None = None
    kappa: float = 1.0
    sampler: str = "ours"
    S: int = 5
    pyr_ratio: float = 0.5
    gcn_weights: str = ""
    offload: bool = True
    failure_rate: float = 0.0
    feddrop_rate: float | None = None
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not 1 <= self.S <= self.n:
            raise ConfigError(f"S={self.S} must lie in [1, n={self.n}]")
        if self.sampler not in SAMPLERS + ("all",):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.tau < 1 or self.T < 1 or self.T % self.tau:
            raise ConfigError("T must be a positive multiple of tau")
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ConfigError("failure_rate must lie in [0, 1]")
        if self.feddrop_rate is not None and self.model != "mlp":
            raise ConfigError("feddrop needs the mlp model")
        self.weights()

    def weights(self) -> ObjectiveWeights:
        """Preset weights with any explicit overrides applied."""
        base = preset(self.regime, self.kappa)
        over = {k: getattr(self, k) for k in ("alpha", "beta_e", "gamma_e") if getattr(self, k) is not None}
        return replace(base, **over)

    def to_toml_dict(self) -> dict:
        flat = asdict(self)
        out = {}
        for table, keys in SCHEMA.items():
            sect = {k: flat[attr] for k, attr in keys.items() if flat[attr] is not None}
            if sect:
                out[table] = sect
        return out

    @classmethod
    def from_toml_dict(cls, doc: dict) -> "ExperimentConfig":
        kw = {}
        for table, body in doc.items():
            if table not in SCHEMA:
                raise ConfigError(f"unknown config table [{table}]")
            if not isinstance(body, dict):
                raise ConfigError(f"[{table}] must be a table")
            for key, val in body.items():
                if key not in SCHEMA[table]:
                    raise ConfigError(f"unknown key {key!r} in [{table}]")
                kw[SCHEMA[table][key]] = val
        types = {f.name: f.type for f in fields(cls)}
        for name, val in kw.items():
            if "float" in types[name] and isinstance(val, int) and not isinstance(val, bool):
                kw[name] = float(val)
        return cls(**kw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return ExperimentConfig.from_toml_dict(doc)


def dump_config(cfg: ExperimentConfig, path) -> None:
    """Write ``cfg`` as TOML (flat scalars only, so a hand formatter suffices)."""
    lines = []
    for table, body in cfg.to_toml_dict().items():
        lines.append(f"[{table}]")
        for k, v in body.items():
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, str):
                s = '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
            else:
                s = repr(v)
            lines.append(f"{k} = {s}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
