"""K-means cluster profiles, cluster matching and data-similarity state.

Similarity between a sender ``k`` and a receiver ``i`` is built from the
centroid differences of matched cluster pairs: every receiver cluster is
paired with at most one sender cluster and vice versa, and the normalized
distances of the pairs are averaged over the sender's cluster count. Lower
values mean more similar data. Offloading shrinks the differences of the
pairs it uses, which drives the link's similarity value toward zero.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from ._seeding import derive_rng
from .errors import ConstraintViolationError, InvalidNetworkError
from .network import Topology

BYTES_PER_FLOAT = 8


@dataclass(frozen=True, eq=False)
class ClusterProfile:
    """K-means summary of one device's data.

    ``cluster_sizes[c] == 0`` marks an empty (surplus) cluster; its centroid
    row is meaningless and it never takes part in matching.
    """

    device: int
    centroids: np.ndarray
    cluster_sizes: np.ndarray
    assignment: np.ndarray

    @property
    def k(self) -> int:
        return len(self.cluster_sizes)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.cluster_sizes > 0)

    @property
    def n_active(self) -> int:
        return int((self.cluster_sizes > 0).sum())

    def upload_bytes(self) -> int:
        """Bytes needed to report the non-empty centroids to the server."""
        return BYTES_PER_FLOAT * self.dim * self.n_active


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        nxt = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[idx].copy()


def kmeans(points, k: int, seed: int, max_iters: int = 100, tol: float = 1e-6,
           device: int = 0) -> ClusterProfile:
    """Lloyd's algorithm from a k-means++ start.

    When ``k`` is at least the number of points every point becomes its own
    cluster and the surplus clusters are returned empty.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n == 0:
        raise ValueError("kmeans needs at least one point")
    if k >= n:
        centroids = np.zeros((k, X.shape[1]))
        centroids[:n] = X
        sizes = np.zeros(k, dtype=np.int64)
        sizes[:n] = 1
        return ClusterProfile(device, centroids, sizes, np.arange(n, dtype=np.int64))
    init = _kmeanspp(X, k, derive_rng(seed, "kmeans", device))
    centroids, labels, _ = _kernels.lloyd(X, init, max_iters, tol)
    sizes = np.bincount(labels, minlength=k).astype(np.int64)
    return ClusterProfile(device, np.asarray(centroids), sizes, np.asarray(labels, dtype=np.int64))


@dataclass(frozen=True)
class ClusterMatching:
    """``pairs[b] = c`` pairs cluster b of the second profile with cluster c
    of the first; ``None`` marks b as unmatched."""

    pairs: Mapping[int, int | None]
    distances: Mapping[int, float] = field(default_factory=dict)

    def matched(self) -> list[tuple[int, int]]:
        """Matched ``(c, b)`` tuples, ordered by b."""
        return [(c, b) for b, c in sorted(self.pairs.items()) if c is not None]


def _normalized_distances(profile_i: ClusterProfile, profile_j: ClusterProfile) -> np.ndarray:
    diff = profile_i.centroids[:, None, :] - profile_j.centroids[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2)) / math.sqrt(profile_i.dim)


def match_clusters(profile_i: ClusterProfile, profile_j: ClusterProfile) -> ClusterMatching:
    """Pair each cluster b of ``profile_j`` with a distinct cluster c of ``profile_i``.

    Contested clusters go to the closest claimant and are withdrawn for the
    rest, repeated until stable. Resolving contests from the closest pair
    outward gives the same fixed point as iterating the rule, so this walks
    all pairs once in ascending ``(distance, b, c)`` order.
    """
    if profile_i.n_active == 0 or profile_j.n_active == 0:
        raise ValueError("both profiles need at least one non-empty cluster")
    dist = _normalized_distances(profile_i, profile_j)
    ci, bj = profile_i.active, profile_j.active
    order = sorted((dist[c, b], b, c) for c in ci for b in bj)
    pairs: dict[int, int | None] = {int(b): None for b in bj}
    dists: dict[int, float] = {}
    used: set[int] = set()
    for d, b, c in order:
        if pairs[b] is None and c not in used:
            pairs[b] = int(c)
            dists[b] = float(d)
            used.add(c)
    return ClusterMatching(pairs, dists)


def similarity(profile_i: ClusterProfile, profile_j: ClusterProfile,
               matching: ClusterMatching) -> float:
    """Mean normalized centroid difference over matched pairs, in [0, 1]."""
    dist = _normalized_distances(profile_i, profile_j)
    total = sum(dist[c, b] for c, b in matching.matched())
    return float(min(1.0, max(0.0, total / profile_i.n_active)))


def connectivity_similarity(lambda_matrix, topo) -> np.ndarray:
    lam = np.asarray(lambda_matrix, dtype=np.float64)
    adj = topo.adjacency if isinstance(topo, Topology) else np.asarray(topo)
    if lam.shape != adj.shape:
        raise InvalidNetworkError(f"shape mismatch: lambda {lam.shape} vs adjacency {adj.shape}")
    return lam * adj


@dataclass(frozen=True, eq=False)
class SimilarityState:
    """Similarity matrix plus per-link matched-pair centroid differences.

    Pair arrays are flat and grouped by link; ``link_slices[(k, i)]`` gives
    the range of pairs for sender k and receiver i. Only links of the
    topology used at construction carry pairs.
    """

    lam: np.ndarray
    adjacency: np.ndarray
    pair_src: np.ndarray
    pair_dst: np.ndarray
    pair_src_cluster: np.ndarray
    pair_dst_cluster: np.ndarray
    sigma: np.ndarray
    n_src_clusters: np.ndarray
    link_slices: Mapping[tuple[int, int], slice]

    @property
    def n(self) -> int:
        return self.lam.shape[0]

    @property
    def n_pairs(self) -> int:
        return len(self.pair_src)

    @property
    def big_lambda(self) -> np.ndarray:
        return connectivity_similarity(self.lam, self.adjacency)

    def sigma_norms(self) -> np.ndarray:
        if self.n_pairs == 0:
            return np.zeros(0)
        return np.sqrt((self.sigma ** 2).sum(axis=1)) / math.sqrt(self.sigma.shape[1])

    def pair_index(self, k: int, i: int, b: int, c: int) -> int:
        sl = self.link_slices.get((k, i))
        if sl is not None:
            for p in range(sl.start, sl.stop):
                if self.pair_src_cluster[p] == b and self.pair_dst_cluster[p] == c:
                    return p
        raise ConstraintViolationError(f"no matched pair for link {k}->{i}, clusters {b}->{c}")

    def with_adjacency(self, topo: Topology) -> "SimilarityState":
        return SimilarityState(self.lam, topo.adjacency.copy(), self.pair_src, self.pair_dst,
                               self.pair_src_cluster, self.pair_dst_cluster, self.sigma,
                               self.n_src_clusters, self.link_slices)


def build_similarity_state(profiles: Sequence[ClusterProfile], topo: Topology) -> SimilarityState:
    """Match every ordered device pair and record pairs along the topology's links."""
    n = len(profiles)
    if n != topo.n:
        raise InvalidNetworkError("need one cluster profile per device")
    lam = np.zeros((n, n))
    src, dst, sc, dc, sig = [], [], [], [], []
    slices: dict[tuple[int, int], slice] = {}
    adj = topo.adjacency
    for k in range(n):
        for i in range(n):
            if k == i:
                continue
            m = match_clusters(profiles[k], profiles[i])
            lam[k, i] = similarity(profiles[k], profiles[i], m)
            if adj[k, i]:
                start = len(src)
                for c, b in m.matched():
                    src.append(k)
                    dst.append(i)
                    sc.append(c)
                    dc.append(b)
                    sig.append(profiles[k].centroids[c] - profiles[i].centroids[b])
                slices[(k, i)] = slice(start, len(src))
    dim = profiles[0].dim
    return SimilarityState(
        lam=lam,
        adjacency=adj.copy(),
        pair_src=np.asarray(src, dtype=np.int64),
        pair_dst=np.asarray(dst, dtype=np.int64),
        pair_src_cluster=np.asarray(sc, dtype=np.int64),
        pair_dst_cluster=np.asarray(dc, dtype=np.int64),
        sigma=np.asarray(sig, dtype=np.float64).reshape(len(src), dim),
        n_src_clusters=np.array([p.n_active for p in profiles], dtype=np.int64),
        link_slices=slices,
    )


def update_sigma(state: SimilarityState, ratios) -> SimilarityState:
    """Shrink each pair's centroid difference by ``1 - ratio`` and refresh λ.

    ``ratios`` is either an array aligned with the state's pairs or a mapping
    ``(k, i, b, c) -> ratio`` over matched pairs.
    """
    if isinstance(ratios, Mapping):
        phi = np.zeros(state.n_pairs)
        for (k, i, b, c), r in ratios.items():
            phi[state.pair_index(k, i, b, c)] = r
    else:
        phi = np.asarray(ratios, dtype=np.float64)
        if phi.shape != (state.n_pairs,):
            raise ConstraintViolationError(
                f"expected {state.n_pairs} ratios, got shape {phi.shape}")
    if np.any(~np.isfinite(phi)) or np.any(phi < 0) or np.any(phi > 1):
        raise ConstraintViolationError("offload ratios must lie in [0, 1]")
    sigma = state.sigma * (1.0 - phi)[:, None]
    lam = state.lam.copy()
    if state.n_pairs:
        norms = np.sqrt((sigma ** 2).sum(axis=1)) / math.sqrt(sigma.shape[1])
        touched = np.flatnonzero(phi > 0)
        for (k, i) in {(int(state.pair_src[p]), int(state.pair_dst[p])) for p in touched}:
            sl = state.link_slices[(k, i)]
            lam[k, i] = min(1.0, max(0.0, norms[sl].sum() / state.n_src_clusters[k]))
    return SimilarityState(lam, state.adjacency, state.pair_src, state.pair_dst,
                           state.pair_src_cluster, state.pair_dst_cluster, sigma,
                           state.n_src_clusters, state.link_slices)


def export_similarity_csv(matrix, path) -> None:
    """Row-major CSV with a header row of device ids."""
    m = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(range(m.shape[1]))
        for row in m:
            w.writerow([repr(float(v)) for v in row])


def read_similarity_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]])
