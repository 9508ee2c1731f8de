"""Models as pure functions of a flat parameter vector."""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError


def _softmax_rows(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _xent(P: np.ndarray, y: np.ndarray) -> float:
    return float(-np.log(np.clip(P[np.arange(len(y)), y], 1e-300, None)).mean())


@dataclass(frozen=True)
class ParamBlock:
    name: str
    size: int
    fully_connected: bool


@dataclass(frozen=True)
class ParamLayout:
    """Named parameter blocks; only fully-connected blocks are dropout targets."""

    blocks: tuple[ParamBlock, ...]
    supports_dropout: bool = True

    @property
    def total(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def fc_total(self) -> int:
        return sum(b.size for b in self.blocks if b.fully_connected)

    def fc_mask(self) -> np.ndarray:
        return np.concatenate([np.full(b.size, b.fully_connected) for b in self.blocks])


def reference_cnn_layout() -> ParamLayout:
    """Two 5x5 conv layers (10 and 20 maps) then dense 320-50-10: 21840 parameters."""
    return ParamLayout((
        ParamBlock("conv1", 1 * 10 * 25 + 10, False),
        ParamBlock("conv2", 10 * 20 * 25 + 20, False),
        ParamBlock("fc1", 320 * 50 + 50, True),
        ParamBlock("fc2", 50 * 10 + 10, True),
    ))


class LogisticModel:
    """Multinomial logistic regression; parameters are a (dim+1, classes) matrix, bias last."""

    kind = "logistic"

    def __init__(self, dim: int, n_classes: int):
        self.dim = dim
        self.n_classes = n_classes

    @property
    def n_params(self) -> int:
        return (self.dim + 1) * self.n_classes

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout((ParamBlock("linear", self.n_params, True),), supports_dropout=False)

    def init(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.zeros(self.n_params)

    def _W(self, w):
        return np.asarray(w, dtype=np.float64).reshape(self.dim + 1, self.n_classes)

    def logits(self, w, X) -> np.ndarray:
        W = self._W(w)
        return X @ W[:-1] + W[-1]

    def loss(self, w, X, y) -> float:
        if len(y) == 0:
            return 0.0
        return _xent(_softmax_rows(self.logits(w, X)), y)

    def grad(self, w, X, y) -> np.ndarray:
        n = len(y)
        if n == 0:
            return np.zeros(self.n_params)
        P = _softmax_rows(self.logits(w, X))
        P[np.arange(n), y] -= 1.0
        P /= n
        return np.vstack([X.T @ P, P.sum(axis=0)]).reshape(-1)

    def per_sample_grads(self, w, X, y) -> np.ndarray:
        n = len(y)
        P = _softmax_rows(self.logits(w, X))
        P[np.arange(n), y] -= 1.0
        Xa = np.hstack([X, np.ones((n, 1))])
        return (Xa[:, :, None] * P[:, None, :]).reshape(n, -1)

    def predict(self, w, X) -> np.ndarray:
        return np.argmax(self.logits(w, X), axis=1)

    def accuracy(self, w, X, y) -> float:
        return float((self.predict(w, X) == y).mean()) if len(y) else 0.0


class MLPModel:
    """One hidden ReLU layer with a softmax head; both layers are dense."""

    kind = "mlp"

    def __init__(self, dim: int, hidden: int, n_classes: int):
        self.dim = dim
        self.hidden = hidden
        self.n_classes = n_classes

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout((
            ParamBlock("fc1", self.dim * self.hidden + self.hidden, True),
            ParamBlock("fc2", self.hidden * self.n_classes + self.n_classes, True),
        ))

    @property
    def n_params(self) -> int:
        return self.layout.total

    def init(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(0)
        w1 = rng.normal(0, np.sqrt(2.0 / self.dim), (self.dim, self.hidden))
        w2 = rng.normal(0, np.sqrt(1.0 / self.hidden), (self.hidden, self.n_classes))
        return np.concatenate([w1.ravel(), np.zeros(self.hidden), w2.ravel(), np.zeros(self.n_classes)])

    def _unpack(self, w):
        d, h, k = self.dim, self.hidden, self.n_classes
        w = np.asarray(w, dtype=np.float64)
        o = 0
        W1 = w[o:o + d * h].reshape(d, h); o += d * h
        b1 = w[o:o + h]; o += h
        W2 = w[o:o + h * k].reshape(h, k); o += h * k
        b2 = w[o:o + k]
        return W1, b1, W2, b2

    def _forward(self, w, X):
        W1, b1, W2, b2 = self._unpack(w)
        Z1 = X @ W1 + b1
        H = np.maximum(Z1, 0.0)
        return Z1, H, H @ W2 + b2

    def logits(self, w, X):
        return self._forward(w, X)[2]

    def loss(self, w, X, y) -> float:
        if len(y) == 0:
            return 0.0
        return _xent(_softmax_rows(self.logits(w, X)), y)

    def grad(self, w, X, y) -> np.ndarray:
        n = len(y)
        if n == 0:
            return np.zeros(self.n_params)
        W1, b1, W2, b2 = self._unpack(w)
        Z1, H, Z2 = self._forward(w, X)
        G2 = _softmax_rows(Z2)
        G2[np.arange(n), y] -= 1.0
        G2 /= n
        G1 = (G2 @ W2.T) * (Z1 > 0)
        return np.concatenate([(X.T @ G1).ravel(), G1.sum(0), (H.T @ G2).ravel(), G2.sum(0)])

    def predict(self, w, X):
        return np.argmax(self.logits(w, X), axis=1)

    def accuracy(self, w, X, y) -> float:
        return float((self.predict(w, X) == y).mean()) if len(y) else 0.0


def make_model(kind: str, dim: int, n_classes: int, hidden: int = 32):
    if kind == "logistic":
        return LogisticModel(dim, n_classes)
    if kind == "mlp":
        return MLPModel(dim, hidden, n_classes)
    raise ConfigError(f"unknown model kind {kind!r}")


_MAGIC = b"D2DW"
_HEADER = struct.Struct("<4sIQI")


def save_params(path, w) -> None:
    """Flat little-endian float64 array behind a (magic, version, count, crc32) header."""
    body = np.ascontiguousarray(w, dtype="<f8").tobytes()
    Path(path).write_bytes(_HEADER.pack(_MAGIC, 1, len(body) // 8, zlib.crc32(body)) + body)


def load_params(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, version, count, crc = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if magic != _MAGIC or version != 1:
        raise ConfigError(f"{path}: not a parameter checkpoint")
    if len(body) != 8 * count or zlib.crc32(body) != crc:
        raise ConfigError(f"{path}: checkpoint is truncated or corrupt")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)
