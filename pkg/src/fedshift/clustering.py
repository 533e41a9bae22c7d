"""First-neighbor hierarchical clustering with an optional distance gate.

The constrained variant links two clusters only when they are first
neighbors (either direction, or sharing the same closest cluster) AND their
centroids are closer than a threshold d under cosine distance.  d = +inf
recovers plain first-neighbor clustering.  K-means and DBSCAN baselines and
the pairwise F-score live here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ClusteringError, ConfigError, NumericError, ShapeError


class Metric(str, Enum):
    COSINE = "COSINE"


@dataclass
class Partition:
    """Dense cluster labels, one per point; labels cover {0..n_clusters-1}."""

    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size:
            present = np.unique(self.labels)
            if not np.array_equal(present, np.arange(self.n_clusters)):
                raise ClusteringError("labels are not densely relabeled")


@dataclass
class Hierarchy:
    """Monotonically coarsening partitions; levels[0] is all-singletons."""

    levels: list
    centroids: list  # per level, (n_clusters, dim) cluster centroids

    def first_level(self) -> Partition:
        """Partition after the first constrained merge pass."""
        return self.levels[1] if len(self.levels) > 1 else self.levels[0]

    def final(self) -> Partition:
        return self.levels[-1]


@dataclass(frozen=True)
class ClusterConfig:
    threshold_d: float = 0.9
    metric: Metric = Metric.COSINE
    min_cluster_size: int = 1

    def validate(self) -> None:
        if not (self.threshold_d > 0):
            raise ConfigError("threshold_d must be > 0 (use inf to disable)")
        if self.min_cluster_size < 1:
            raise ConfigError("min_cluster_size must be >= 1")


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine distance undefined for zero vectors")
    return float(1.0 - np.dot(a, b) / (na * nb))


def _cosine_distance_matrix(points: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(points, axis=1)
    if np.any(norms == 0.0):
        raise NumericError("cosine distance undefined for zero vectors")
    unit = points / norms[:, None]
    return np.clip(1.0 - unit @ unit.T, 0.0, 2.0)


def first_neighbors(points) -> np.ndarray:
    """kappa[i] = nearest other point; ties broken by smallest index."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        raise ClusteringError("first neighbors need at least 2 points")
    dist = _cosine_distance_matrix(points)
    np.fill_diagonal(dist, np.inf)
    return dist.argmin(axis=1)


def merge_condition(i: int, j: int, kappa: np.ndarray, centroids: np.ndarray,
                    d: float) -> bool:
    """Link i and j iff they are first neighbors (or share one) within d."""
    if i == j:
        raise ClusteringError("merge condition needs two distinct clusters")
    neighbor = kappa[i] == j or kappa[j] == i or kappa[i] == kappa[j]
    if not neighbor:
        return False
    return cosine_distance(centroids[i], centroids[j]) < d


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True


def _dense_relabel(raw_labels: np.ndarray) -> Partition:
    """Relabel in order of first appearance."""
    mapping = {}
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for i, lab in enumerate(raw_labels):
        key = int(lab)
        if key not in mapping:
            mapping[key] = len(mapping)
        labels[i] = mapping[key]
    return Partition(labels, len(mapping))


def _centroids_of(points: np.ndarray, partition: Partition) -> np.ndarray:
    cent = np.zeros((partition.n_clusters, points.shape[1]))
    counts = np.bincount(partition.labels, minlength=partition.n_clusters)
    np.add.at(cent, partition.labels, points)
    return cent / counts[:, None]


def _merge_pass(centroids: np.ndarray, d: float) -> Partition:
    """One constrained pass: link passing pairs, take connected components."""
    m = len(centroids)
    dist = _cosine_distance_matrix(centroids)
    np.fill_diagonal(dist, np.inf)
    kappa = dist.argmin(axis=1)
    adjacent = (kappa[:, None] == np.arange(m)[None, :])
    adjacent |= adjacent.T
    adjacent |= kappa[:, None] == kappa[None, :]
    linked = adjacent & (dist < d)
    uf = UnionFind(m)
    for i, j in zip(*np.nonzero(np.triu(linked, k=1))):
        uf.union(int(i), int(j))
    return _dense_relabel(np.asarray([uf.find(i) for i in range(m)]))


def c_finch(points, cfg: ClusterConfig) -> Hierarchy:
    """Recursive constrained first-neighbor clustering until no merge passes."""
    cfg.validate()
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise ClusteringError("cannot cluster an empty point set")
    current = Partition(np.arange(len(points)), len(points))
    levels = [current]
    centroids = [_centroids_of(points, current)]
    while current.n_clusters > 1:
        merged = _merge_pass(centroids[-1], cfg.threshold_d)
        if merged.n_clusters == current.n_clusters:
            break
        # lift cluster-level labels back to points
        current = Partition(merged.labels[current.labels], merged.n_clusters)
        levels.append(current)
        centroids.append(_centroids_of(points, current))
    return Hierarchy(levels, centroids)


def finch(points) -> Hierarchy:
    """Unconstrained first-neighbor clustering (distance gate disabled)."""
    return c_finch(points, ClusterConfig(threshold_d=math.inf))


def kmeans(points, k: int, seed: int) -> Partition:
    """K-means on cosine distance with seeded farthest-point initialization."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not (1 <= k <= n):
        raise ConfigError(f"kmeans needs 1 <= k <= {n}")
    dist = _cosine_distance_matrix(points)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(0, n))]
    while len(chosen) < k:
        mindist = dist[chosen].min(axis=0)
        mindist[chosen] = -1.0
        chosen.append(int(mindist.argmax()))
    centroids = points[chosen].copy()
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(100):
        norms = np.linalg.norm(centroids, axis=1)
        norms[norms == 0.0] = 1.0
        unit_c = centroids / norms[:, None]
        pnorms = np.linalg.norm(points, axis=1)
        unit_p = points / pnorms[:, None]
        labels = (1.0 - unit_p @ unit_c.T).argmin(axis=1)
        new_centroids = centroids.copy()
        for c in range(k):
            members = points[labels == c]
            if len(members):
                new_centroids[c] = members.mean(axis=0)
        movement = np.linalg.norm(new_centroids - centroids, axis=1).max()
        centroids = new_centroids
        if movement < 1e-9:
            break
    return _dense_relabel(labels)


def dbscan(points, eps: float, min_pts: int) -> Partition:
    """Density clustering on cosine distance; noise becomes singletons."""
    if eps <= 0:
        raise ConfigError("eps must be > 0")
    if min_pts < 1:
        raise ConfigError("min_pts must be >= 1")
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    dist = _cosine_distance_matrix(points)
    neighborhoods = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = np.asarray([len(nb) >= min_pts for nb in neighborhoods])
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        frontier = list(neighborhoods[i])
        while frontier:
            j = frontier.pop(0)
            if labels[j] == -1:
                labels[j] = cluster
                if core[j]:
                    frontier.extend(neighborhoods[j])
        cluster += 1
    for i in range(n):  # noise points become singleton clusters
        if labels[i] == -1:
            labels[i] = cluster
            cluster += 1
    return _dense_relabel(labels)


def pairwise_f_score(pred: Partition, truth) -> float:
    """Pair-level F-measure between a predicted partition and true labels."""
    truth = np.asarray(truth, dtype=np.int64)
    if len(pred.labels) != len(truth):
        raise ShapeError("pred and truth lengths differ")

    def _pair_count(labels: np.ndarray) -> float:
        counts = np.unique(labels, return_counts=True)[1]
        return float((counts * (counts - 1) // 2).sum())

    # joint contingency via paired label codes
    shifted_truth = truth - truth.min()
    joint = pred.labels.astype(np.int64) * (shifted_truth.max() + 1) + shifted_truth
    both = _pair_count(joint)
    in_pred = _pair_count(pred.labels)
    in_truth = _pair_count(truth)
    if in_pred == 0.0 and in_truth == 0.0:
        return 1.0
    if in_pred == 0.0 or in_truth == 0.0 or both == 0.0:
        return 0.0
    precision = both / in_pred
    recall = both / in_truth
    return 2.0 * precision * recall / (precision + recall)


def export_partition_csv(partition: Partition, path) -> None:
    lines = ["point_index,cluster_label"]
    lines += [f"{i},{int(lab)}" for i, lab in enumerate(partition.labels)]
    from pathlib import Path
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
