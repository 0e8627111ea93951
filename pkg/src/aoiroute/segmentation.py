"""Region segmentation: K-means over empirical latency distributions.

Clustering uses the K-R (Wasserstein-1) distance between empirical CDFs,
farthest-point initialization (first center random, every next one the sample
maximizing its minimum distance to the chosen centers), and pointwise
mean-CDF center updates.  Cells whose latency distributions cluster together
form a region; each region carries its center distributions plus the identity
and capacity of the fog node serving it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .distributions import EmpiricalDistribution, kr_distance, mean_cdf
from .rngutil import substream

__all__ = [
    "ClusterInfo",
    "RegionMap",
    "IterationStats",
    "ClusterResult",
    "init_centers",
    "cluster",
    "segment_cells",
]


@dataclass(frozen=True)
class ClusterInfo:
    label: int
    fog_node_id: str
    capacity: int
    fog: EmpiricalDistribution
    cloud: EmpiricalDistribution

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be non-negative")


@dataclass(frozen=True)
class RegionMap:
    """Cell -> cluster label association plus per-cluster server statistics."""

    n_clusters: int
    cells: dict  # (ix, iy) -> label
    clusters: tuple  # ClusterInfo, indexed by label

    def __post_init__(self):
        labels = sorted(c.label for c in self.clusters)
        if labels != list(range(self.n_clusters)):
            raise ValueError("cluster labels must be 0..R-1")
        if any(lbl not in range(self.n_clusters) for lbl in self.cells.values()):
            raise ValueError("cell label outside cluster range")
        object.__setattr__(
            self, "clusters", tuple(sorted(self.clusters, key=lambda c: c.label))
        )

    def cluster(self, label: int) -> ClusterInfo:
        return self.clusters[label]

    @property
    def labels(self) -> set:
        return set(range(self.n_clusters))

    def to_json_dict(self) -> dict:
        return {
            "R": self.n_clusters,
            "cells": [
                {"ix": ix, "iy": iy, "label": self.cells[(ix, iy)]}
                for ix, iy in sorted(self.cells)
            ],
            "clusters": [
                {
                    "label": c.label,
                    "fog_node_id": c.fog_node_id,
                    "capacity": c.capacity,
                    "fog_cdf": c.fog.to_json_dict(),
                    "cloud_cdf": c.cloud.to_json_dict(),
                }
                for c in self.clusters
            ],
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "RegionMap":
        cells = {(c["ix"], c["iy"]): c["label"] for c in doc["cells"]}
        clusters = tuple(
            ClusterInfo(
                label=c["label"],
                fog_node_id=c["fog_node_id"],
                capacity=c["capacity"],
                fog=EmpiricalDistribution.from_json_dict(c["fog_cdf"]),
                cloud=EmpiricalDistribution.from_json_dict(c["cloud_cdf"]),
            )
            for c in doc["clusters"]
        )
        return RegionMap(n_clusters=doc["R"], cells=cells, clusters=clusters)


def init_centers(
    samples: Sequence,
    n_clusters: int,
    seed: int,
    distance: Callable = kr_distance,
) -> list[int]:
    """Farthest-point initialization; returns sample indices of the centers.

    The first center is chosen uniformly at random; every following one is
    the sample whose minimum distance to the already-chosen centers is
    largest, ties broken by lowest sample index.
    """
    p = len(samples)
    if n_clusters <= 1:
        raise ValueError("need at least 2 clusters")
    if n_clusters > p:
        raise ValueError("too many clusters")
    rng = substream(seed, "init")
    first = int(rng.integers(p))
    chosen = [first]
    min_dist = np.array([distance(s, samples[first]) for s in samples])
    while len(chosen) < n_clusters:
        masked = min_dist.copy()
        masked[chosen] = -np.inf
        nxt = int(np.argmax(masked))  # argmax takes the lowest index on ties
        chosen.append(nxt)
        d_new = np.array([distance(s, samples[nxt]) for s in samples])
        min_dist = np.minimum(min_dist, d_new)
    return chosen


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    cost_before_assign: Optional[float]  # previous labels measured on current centers
    cost_after_assign: float
    labels_changed: int
    repairs: tuple = ()


@dataclass(frozen=True)
class ClusterResult:
    labels: np.ndarray
    centers: list
    iterations: tuple
    converged: bool


def cluster(
    samples: Sequence,
    n_clusters: int,
    max_iters: int = 20,
    seed: int = 0,
    strict_iterations: bool = False,
    distance: Callable = kr_distance,
    center_update: Callable = mean_cdf,
) -> ClusterResult:
    """Nearest-center assignment / mean-CDF update loop.

    Runs until the assignment stabilizes or ``max_iters`` passes elapse;
    ``strict_iterations`` forces the full iteration count.  An assignment
    step can never increase the within-cluster distance sum (recorded per
    iteration); a cluster emptied by reassignment is re-seeded with the
    globally worst-fit sample so the number of clusters stays constant.
    """
    if max_iters <= 0:
        raise ValueError("max_iters must be positive")
    p = len(samples)
    centers = [samples[i] for i in init_centers(samples, n_clusters, seed, distance)]
    labels = None
    log = []
    converged = False
    for it in range(1, max_iters + 1):
        dmat = np.array([[distance(s, c) for c in centers] for s in samples])
        new_labels = np.argmin(dmat, axis=1)  # ties -> lowest cluster index
        cost_before = (
            float(dmat[np.arange(p), labels].sum()) if labels is not None else None
        )
        repairs = []
        for empty in range(n_clusters):
            if np.any(new_labels == empty):
                continue
            fit = dmat[np.arange(p), new_labels].copy()
            # only steal from clusters that keep at least one member
            counts = np.bincount(new_labels, minlength=n_clusters)
            fit[counts[new_labels] < 2] = -np.inf
            worst = int(np.argmax(fit))
            new_labels[worst] = empty
            repairs.append((empty, worst))
        cost_after = float(dmat[np.arange(p), new_labels].sum())
        changed = p if labels is None else int(np.sum(new_labels != labels))
        log.append(
            IterationStats(
                iteration=it,
                cost_before_assign=cost_before,
                cost_after_assign=cost_after,
                labels_changed=changed,
                repairs=tuple(repairs),
            )
        )
        stable = labels is not None and changed == 0
        labels = new_labels
        centers = [
            center_update([samples[i] for i in np.flatnonzero(labels == k)])
            for k in range(n_clusters)
        ]
        if stable and not strict_iterations:
            converged = True
            break
    return ClusterResult(
        labels=labels, centers=centers, iterations=tuple(log), converged=converged
    )


def _joint_distance(a, b) -> float:
    return kr_distance(a[0], b[0]) + kr_distance(a[1], b[1])


def _joint_mean(members):
    return (mean_cdf([m[0] for m in members]), mean_cdf([m[1] for m in members]))


def segment_cells(
    cell_dists: dict,
    n_clusters: int,
    max_iters: int = 20,
    seed: int = 0,
    server: str = "fog",
    capacity: int = 4,
    fog_node_ids: Optional[Sequence[str]] = None,
    strict_iterations: bool = False,
) -> RegionMap:
    """Cluster covered cells into regions by latency-distribution similarity.

    ``server`` selects what gets clustered: the fog distributions, the cloud
    distributions, or both jointly (concatenated CDFs, equal weight).  Each
    cluster is assigned one fog node with the given vehicle capacity.
    """
    if server not in ("fog", "cloud", "joint"):
        raise ValueError("server must be 'fog', 'cloud' or 'joint'")
    keys = sorted(cell_dists)
    pairs = [cell_dists[k] for k in keys]
    if server == "fog":
        items = [p[0] for p in pairs]
        result = cluster(items, n_clusters, max_iters, seed, strict_iterations)
    elif server == "cloud":
        items = [p[1] for p in pairs]
        result = cluster(items, n_clusters, max_iters, seed, strict_iterations)
    else:
        result = cluster(
            pairs, n_clusters, max_iters, seed, strict_iterations,
            distance=_joint_distance, center_update=_joint_mean,
        )
    labels = result.labels
    clusters = []
    for k in range(n_clusters):
        member_idx = np.flatnonzero(labels == k)
        fog_center = mean_cdf([pairs[i][0] for i in member_idx])
        cloud_center = mean_cdf([pairs[i][1] for i in member_idx])
        node_id = fog_node_ids[k] if fog_node_ids else f"fog-{k}"
        clusters.append(
            ClusterInfo(
                label=k,
                fog_node_id=node_id,
                capacity=capacity,
                fog=fog_center,
                cloud=cloud_center,
            )
        )
    cells = {key: int(labels[i]) for i, key in enumerate(keys)}
    return RegionMap(n_clusters=n_clusters, cells=cells, clusters=tuple(clusters))
