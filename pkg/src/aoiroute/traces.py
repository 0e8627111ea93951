"""RTT trace ingestion, spatial binning, and synthetic trace generation.

Input traces are flat CSV, one row per ping:

    timestamp_ms,lat,lon,speed_mps,rtt_fog_ms,rtt_cloud_ms,payload_bytes

Coordinates are mapped to square grid cells through a local equirectangular
projection around a configured origin -- adequate at campus scale and free of
geodesy dependencies.  Rows with an absent RTT value (ping loss) still count
toward cell coverage but contribute no latency sample.  A synthetic generator
stands in for a real measurement campaign: per-region shifted-lognormal
latency models sampled along a vehicle path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .distributions import DEFAULT_GRID, EmpiricalDistribution, GridSpec, build_distribution
from .rngutil import substream

__all__ = [
    "TRACE_CSV_HEADER",
    "EARTH_RADIUS_M",
    "TraceRecord",
    "CellTable",
    "IngestReport",
    "project",
    "unproject",
    "ingest_csv",
    "build_cell_distributions",
    "LatencyModel",
    "RegionSpec",
    "Scenario",
    "generate_synthetic_traces",
]

TRACE_CSV_HEADER = "timestamp_ms,lat,lon,speed_mps,rtt_fog_ms,rtt_cloud_ms,payload_bytes"
_MANDATORY_COLUMNS = ("timestamp_ms", "lat", "lon", "speed_mps", "rtt_fog_ms", "rtt_cloud_ms")
EARTH_RADIUS_M = 6_371_000.0
DEFAULT_PAYLOAD_BYTES = 996


@dataclass(frozen=True)
class TraceRecord:
    timestamp_ms: int
    lat: float
    lon: float
    speed_mps: float
    rtt_fog_ms: Optional[float]
    rtt_cloud_ms: Optional[float]
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES


def project(lat: float, lon: float, origin: tuple[float, float]) -> tuple[float, float]:
    """Local equirectangular projection to meters east/north of the origin."""
    lat0, lon0 = origin
    x = EARTH_RADIUS_M * math.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * math.radians(lat - lat0)
    return x, y


def unproject(x: float, y: float, origin: tuple[float, float]) -> tuple[float, float]:
    lat0, lon0 = origin
    lat = lat0 + math.degrees(y / EARTH_RADIUS_M)
    lon = lon0 + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


def cell_of(x: float, y: float, cell_size_m: float) -> tuple[int, int]:
    return int(math.floor(x / cell_size_m)), int(math.floor(y / cell_size_m))


@dataclass
class _CellSamples:
    fog: list = field(default_factory=list)
    cloud: list = field(default_factory=list)
    record_count: int = 0


@dataclass
class CellTable:
    """Per-cell raw latency samples keyed by (ix, iy)."""

    cell_size_m: float
    origin: tuple[float, float]
    cells: dict = field(default_factory=dict)

    def cell(self, ix: int, iy: int) -> _CellSamples:
        return self.cells.setdefault((ix, iy), _CellSamples())

    @property
    def record_count(self) -> int:
        return sum(c.record_count for c in self.cells.values())


@dataclass(frozen=True)
class IngestReport:
    accepted: int
    rejected: dict  # reason -> count
    cells: int
    clipped: int

    def to_json_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": [
                {"reason": reason, "count": count}
                for reason, count in sorted(self.rejected.items())
            ],
            "cells": self.cells,
            "clipped": self.clipped,
        }


def _parse_rtt(raw: str) -> Optional[float]:
    raw = raw.strip()
    if raw == "":
        return None  # ping loss
    value = float(raw)  # may raise ValueError -> caller rejects as unparseable
    if not math.isfinite(value) or value <= 0:
        raise _InvalidLatency()
    return value


class _InvalidLatency(Exception):
    pass


def ingest_csv(
    path,
    cell_size_m: float = 50.0,
    origin: tuple[float, float] = (0.0, 0.0),
    grid: GridSpec = DEFAULT_GRID,
) -> tuple[CellTable, IngestReport]:
    """Stream a trace CSV into a cell table.

    Bad rows are rejected (counted per reason), never fatal; a missing
    mandatory column is a schema error and aborts.  ``clipped`` counts RTT
    values above the grid maximum, which later become clipped CDF mass.
    """
    table = CellTable(cell_size_m=cell_size_m, origin=origin)
    rejected: dict[str, int] = {}
    accepted = 0
    clipped = 0
    last_ts = None

    def reject(reason: str):
        rejected[reason] = rejected.get(reason, 0) + 1

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if any(col not in header for col in _MANDATORY_COLUMNS):
            raise ValueError("schema error")
        for row in reader:
            try:
                ts = int(row["timestamp_ms"])
                lat = float(row["lat"])
                lon = float(row["lon"])
                speed = float(row["speed_mps"])
                payload_raw = (row.get("payload_bytes") or "").strip()
                payload = int(payload_raw) if payload_raw else DEFAULT_PAYLOAD_BYTES
            except (TypeError, ValueError):
                reject("unparseable")
                continue
            try:
                fog = _parse_rtt(row["rtt_fog_ms"] or "")
                cloud = _parse_rtt(row["rtt_cloud_ms"] or "")
            except ValueError:
                reject("unparseable")
                continue
            except _InvalidLatency:
                reject("invalid latency")
                continue
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                reject("invalid coordinate")
                continue
            if speed < 0 or not math.isfinite(speed):
                reject("invalid speed")
                continue
            if last_ts is not None and ts < last_ts:
                reject("timestamp order")
                continue
            last_ts = ts
            accepted += 1
            x, y = project(lat, lon, origin)
            cell = table.cell(*cell_of(x, y, cell_size_m))
            cell.record_count += 1
            if fog is not None:
                cell.fog.append(fog)
                clipped += fog > grid.grid_max
            if cloud is not None:
                cell.cloud.append(cloud)
                clipped += cloud > grid.grid_max
            _ = TraceRecord(ts, lat, lon, speed, fog, cloud, payload)
    report = IngestReport(
        accepted=accepted,
        rejected=rejected,
        cells=len(table.cells),
        clipped=int(clipped),
    )
    return table, report


def build_cell_distributions(
    table: CellTable,
    min_samples: int = 100,
    grid: GridSpec = DEFAULT_GRID,
):
    """Empirical fog/cloud distributions per sufficiently covered cell.

    Cells with fewer than ``min_samples`` values for either server are
    excluded and listed.  Returns ({cell: (fog, cloud)}, excluded_cells).
    """
    out: dict[tuple[int, int], tuple[EmpiricalDistribution, EmpiricalDistribution]] = {}
    excluded = []
    for key in sorted(table.cells):
        samples = table.cells[key]
        if len(samples.fog) < min_samples or len(samples.cloud) < min_samples:
            excluded.append(key)
            continue
        out[key] = (
            build_distribution(samples.fog, grid),
            build_distribution(samples.cloud, grid),
        )
    if not out:
        raise ValueError("no coverage")
    return out, excluded


# --- synthetic traces -------------------------------------------------------


@dataclass(frozen=True)
class LatencyModel:
    """Shifted lognormal: shift_ms + exp(Normal(mu, sigma))."""

    shift_ms: float
    mu: float
    sigma: float

    def __post_init__(self):
        if self.shift_ms < 0 or self.sigma <= 0:
            raise ValueError("invalid scenario")

    def mean(self) -> float:
        return self.shift_ms + math.exp(self.mu + self.sigma**2 / 2)

    def draw(self, rng: np.random.Generator) -> float:
        return self.shift_ms + math.exp(rng.normal(self.mu, self.sigma))

    def to_json_dict(self) -> dict:
        return {"shift_ms": self.shift_ms, "mu": self.mu, "sigma": self.sigma}

    @staticmethod
    def from_json_dict(doc: dict) -> "LatencyModel":
        return LatencyModel(doc["shift_ms"], doc["mu"], doc["sigma"])


@dataclass(frozen=True)
class RegionSpec:
    """Axis-aligned rectangle (meters, local frame) with its latency models."""

    name: str
    x_range_m: tuple[float, float]
    y_range_m: tuple[float, float]
    fog: LatencyModel
    cloud: LatencyModel

    def contains(self, x: float, y: float) -> bool:
        return (
            self.x_range_m[0] <= x <= self.x_range_m[1]
            and self.y_range_m[0] <= y <= self.y_range_m[1]
        )

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "x_range_m": list(self.x_range_m),
            "y_range_m": list(self.y_range_m),
            "fog": self.fog.to_json_dict(),
            "cloud": self.cloud.to_json_dict(),
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "RegionSpec":
        return RegionSpec(
            name=doc["name"],
            x_range_m=tuple(doc["x_range_m"]),
            y_range_m=tuple(doc["y_range_m"]),
            fog=LatencyModel.from_json_dict(doc["fog"]),
            cloud=LatencyModel.from_json_dict(doc["cloud"]),
        )


@dataclass(frozen=True)
class Scenario:
    """Synthetic measurement campaign: regions, a vehicle path, a sample rate."""

    origin: tuple[float, float]
    regions: tuple
    path: tuple  # waypoints (x_m, y_m) in the local frame
    speed_mps: float = 10.0
    sample_rate_hz: float = 1.0
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES
    start_timestamp_ms: int = 0
    laps: int = 1
    fog_loss_prob: float = 0.0
    cloud_loss_prob: float = 0.0

    def __post_init__(self):
        if self.speed_mps <= 0 or self.sample_rate_hz <= 0 or self.laps < 1:
            raise ValueError("invalid scenario")
        if not self.regions or len(self.path) < 1:
            raise ValueError("invalid scenario")
        if not (0 <= self.fog_loss_prob < 1 and 0 <= self.cloud_loss_prob < 1):
            raise ValueError("invalid scenario")

    def to_json_dict(self) -> dict:
        return {
            "origin": {"lat": self.origin[0], "lon": self.origin[1]},
            "regions": [r.to_json_dict() for r in self.regions],
            "path": [list(p) for p in self.path],
            "speed_mps": self.speed_mps,
            "sample_rate_hz": self.sample_rate_hz,
            "payload_bytes": self.payload_bytes,
            "start_timestamp_ms": self.start_timestamp_ms,
            "laps": self.laps,
            "fog_loss_prob": self.fog_loss_prob,
            "cloud_loss_prob": self.cloud_loss_prob,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "Scenario":
        return Scenario(
            origin=(doc["origin"]["lat"], doc["origin"]["lon"]),
            regions=tuple(RegionSpec.from_json_dict(r) for r in doc["regions"]),
            path=tuple(tuple(p) for p in doc["path"]),
            speed_mps=doc.get("speed_mps", 10.0),
            sample_rate_hz=doc.get("sample_rate_hz", 1.0),
            payload_bytes=doc.get("payload_bytes", DEFAULT_PAYLOAD_BYTES),
            start_timestamp_ms=doc.get("start_timestamp_ms", 0),
            laps=doc.get("laps", 1),
            fog_loss_prob=doc.get("fog_loss_prob", 0.0),
            cloud_loss_prob=doc.get("cloud_loss_prob", 0.0),
        )


def _path_position(waypoints, distance: float):
    """Point at the given arc length along the waypoint polyline."""
    remaining = distance
    for (x0, y0), (x1, y1) in zip(waypoints, waypoints[1:]):
        seg = math.hypot(x1 - x0, y1 - y0)
        if remaining <= seg or seg == 0:
            if seg == 0:
                continue
            f = remaining / seg
            return x0 + f * (x1 - x0), y0 + f * (y1 - y0)
        remaining -= seg
    return waypoints[-1]


def _path_length(waypoints) -> float:
    return sum(
        math.hypot(x1 - x0, y1 - y0)
        for (x0, y0), (x1, y1) in zip(waypoints, waypoints[1:])
    )


def generate_synthetic_traces(scenario: Scenario, seed: int, out_path) -> int:
    """Write a synthetic trace CSV; returns the number of rows written.

    The vehicle traverses the path at constant speed, emitting one row per
    sample instant; RTTs come from the latency models of the region the
    vehicle is in.  Fixed seed means byte-identical output.
    """
    lap_length = _path_length(scenario.path)
    total_time_s = scenario.laps * lap_length / scenario.speed_mps
    n_samples = int(math.floor(total_time_s * scenario.sample_rate_hz))
    rng = substream(seed, "trace")
    rows = 0
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(TRACE_CSV_HEADER + "\n")
        for k in range(n_samples):
            t = k / scenario.sample_rate_hz
            dist = (scenario.speed_mps * t) % lap_length if lap_length > 0 else 0.0
            x, y = _path_position(scenario.path, dist)
            region = next((r for r in scenario.regions if r.contains(x, y)), None)
            if region is None:
                raise ValueError(f"path leaves region coverage at ({x:.1f}, {y:.1f})")
            fog: Optional[float] = region.fog.draw(rng)
            if scenario.fog_loss_prob > 0 and rng.random() < scenario.fog_loss_prob:
                fog = None
            cloud: Optional[float] = region.cloud.draw(rng)
            if scenario.cloud_loss_prob > 0 and rng.random() < scenario.cloud_loss_prob:
                cloud = None
            lat, lon = unproject(x, y, scenario.origin)
            ts = scenario.start_timestamp_ms + int(round(1000 * t))
            fh.write(
                f"{ts},{lat!r},{lon!r},{scenario.speed_mps!r},"
                f"{'' if fog is None else repr(fog)},"
                f"{'' if cloud is None else repr(cloud)},"
                f"{scenario.payload_bytes}\n"
            )
            rows += 1
    return rows
