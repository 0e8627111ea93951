"""Empirical latency distributions and the Kantorovich-Rubinstein distance.

A distribution is an empirical CDF over round-trip latencies (ms).  Two
backings exist:

* sample-backed -- built from raw latency values; the CDF is the exact
  empirical step function and sampling is a bootstrap over the raw values;
* grid-backed -- only the CDF evaluated on the common grid is known (cluster
  centers produced by :func:`mean_cdf`, or anything read back from JSON);
  the CDF is treated as a step function that jumps at grid points.

Distances are computed exactly on the merged step breakpoints of the two
operands, so there is no discretization error for sample-backed pairs; the
grid matters only for averaging and serialization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "GridSpec",
    "EmpiricalDistribution",
    "build_distribution",
    "kr_distance",
    "pairwise_kr",
    "sample_latency",
    "mean_cdf",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform evaluation grid in ms. Default 0..1000 ms, 1 ms step."""

    grid_min: float = 0.0
    grid_max: float = 1000.0
    grid_step: float = 1.0

    def __post_init__(self):
        if self.grid_step <= 0 or self.grid_max <= self.grid_min:
            raise ValueError("invalid grid")
        n = (self.grid_max - self.grid_min) / self.grid_step
        if abs(n - round(n)) > 1e-9:
            raise ValueError("grid span must be a whole number of steps")

    @property
    def n_points(self) -> int:
        return int(round((self.grid_max - self.grid_min) / self.grid_step)) + 1

    def points(self) -> np.ndarray:
        return self.grid_min + self.grid_step * np.arange(self.n_points)


DEFAULT_GRID = GridSpec()


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Empirical CDF on a common grid, immutable after construction.

    ``samples`` is the sorted raw support when sample-backed, else None.
    ``sample_count`` survives serialization even though raw samples do not.
    """

    grid: GridSpec
    cdf: np.ndarray
    samples: Optional[np.ndarray]
    sample_count: int
    clip_count: int = 0

    def __post_init__(self):
        cdf = np.asarray(self.cdf, dtype=float)
        if cdf.shape != (self.grid.n_points,):
            raise ValueError("cdf length does not match grid")
        if np.any(np.diff(cdf) < 0) or cdf[0] < 0 or abs(cdf[-1] - 1.0) > 1e-12:
            raise ValueError("cdf must be non-decreasing and end at 1")
        object.__setattr__(self, "cdf", cdf)
        if self.samples is not None:
            object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))

    @property
    def sample_backed(self) -> bool:
        return self.samples is not None

    def breakpoints(self) -> np.ndarray:
        """Points where the step CDF may jump."""
        if self.samples is not None:
            return np.unique(self.samples)
        return self.grid.points()

    def cdf_at(self, t: np.ndarray) -> np.ndarray:
        """Right-continuous CDF evaluated at arbitrary points."""
        t = np.asarray(t, dtype=float)
        if self.samples is not None:
            return np.searchsorted(self.samples, t, side="right") / len(self.samples)
        pts = self.grid.points()
        idx = np.searchsorted(pts, t, side="right") - 1
        out = np.where(idx >= 0, self.cdf[np.clip(idx, 0, None)], 0.0)
        return out

    def mean(self) -> float:
        """Mean latency; from raw samples when available, else from grid mass."""
        if self.samples is not None:
            return float(np.mean(self.samples))
        pts = self.grid.points()
        pmf = np.diff(self.cdf, prepend=0.0)
        return float(np.dot(pts, pmf))

    def to_json_dict(self) -> dict:
        return {
            "grid_min": self.grid.grid_min,
            "grid_max": self.grid.grid_max,
            "grid_step": self.grid.grid_step,
            "sample_count": int(self.sample_count),
            "clip_count": int(self.clip_count),
            "cdf": [float(v) for v in self.cdf],
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "EmpiricalDistribution":
        grid = GridSpec(doc["grid_min"], doc["grid_max"], doc["grid_step"])
        return EmpiricalDistribution(
            grid=grid,
            cdf=np.asarray(doc["cdf"], dtype=float),
            samples=None,
            sample_count=int(doc["sample_count"]),
            clip_count=int(doc["clip_count"]),
        )


def build_distribution(
    samples: Sequence[float], grid: GridSpec = DEFAULT_GRID
) -> EmpiricalDistribution:
    """Empirical CDF of latency samples on the given grid.

    Samples above the grid maximum are clipped to it and counted; negative or
    non-finite values are rejected.
    """
    arr = np.asarray(list(samples), dtype=float)
    if arr.size == 0:
        raise ValueError("no samples")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("invalid latency")
    clip_count = int(np.sum(arr > grid.grid_max))
    arr = np.minimum(arr, grid.grid_max)
    arr.sort()
    cdf = np.searchsorted(arr, grid.points(), side="right") / arr.size
    return EmpiricalDistribution(
        grid=grid,
        cdf=cdf,
        samples=arr,
        sample_count=int(arr.size),
        clip_count=clip_count,
    )


def _require_same_grid(f: EmpiricalDistribution, g: EmpiricalDistribution):
    if f.grid != g.grid:
        raise ValueError("grid mismatch")


def kr_distance(f: EmpiricalDistribution, g: EmpiricalDistribution) -> float:
    """Integral of |F(t) - G(t)| dt, exact on the merged step breakpoints.

    For sample-backed operands this is the exact Wasserstein-1 distance of the
    sample multisets; grid-backed operands are integrated as grid step
    functions.
    """
    _require_same_grid(f, g)
    pts = np.union1d(f.breakpoints(), g.breakpoints())
    if pts.size < 2:
        return 0.0
    diff = np.abs(f.cdf_at(pts[:-1]) - g.cdf_at(pts[:-1]))
    return float(np.dot(diff, np.diff(pts)))


def pairwise_kr(dists: Sequence[EmpiricalDistribution]) -> np.ndarray:
    """Symmetric matrix of pairwise K-R distances."""
    n = len(dists)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = kr_distance(dists[i], dists[j])
            out[i, j] = d
            out[j, i] = d
    return out


def sample_latency(dist: EmpiricalDistribution, rng: np.random.Generator) -> float:
    """One latency draw.

    Sample-backed: uniform bootstrap over the raw values. Grid-backed:
    inverse-CDF over the grid points (the discrete law the stored CDF implies).
    """
    if dist.samples is not None:
        return float(dist.samples[rng.integers(len(dist.samples))])
    u = rng.random()
    idx = int(np.searchsorted(dist.cdf, u, side="left"))
    idx = min(idx, dist.grid.n_points - 1)
    return float(dist.grid.points()[idx])


def mean_cdf(members: Iterable[EmpiricalDistribution]) -> EmpiricalDistribution:
    """Pointwise arithmetic mean of member CDFs (cluster-center update)."""
    members = list(members)
    if not members:
        raise ValueError("empty cluster")
    grid = members[0].grid
    for m in members[1:]:
        _require_same_grid(members[0], m)
    stacked = np.stack([m.cdf for m in members])
    return EmpiricalDistribution(
        grid=grid,
        cdf=stacked.mean(axis=0),
        samples=None,
        sample_count=int(sum(m.sample_count for m in members)),
        clip_count=int(sum(m.clip_count for m in members)),
    )
