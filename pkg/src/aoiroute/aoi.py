"""Event-driven age-of-information computation.

The age process A(t) = t - W(t) is piecewise linear with slope 1: W(t) is the
generation timestamp of the freshest update whose processed result has been
delivered by t, so A only drops at delivery instants and only when the
delivered update is fresher than everything delivered before (stale
deliveries are discarded by the max filter).  All statistics -- the
confidence Pr(A <= a_max), read as the time-average measure of {A <= a_max},
and time-average age -- are integrated exactly from the breakpoints; there is
no time discretization anywhere in this module.

Times are milliseconds throughout.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .distributions import EmpiricalDistribution, sample_latency
from .rngutil import substream

__all__ = [
    "UpdateLog",
    "AoITrajectory",
    "compute_trajectory",
    "confidence",
    "time_average_age",
    "SimulationSettings",
    "ConfidenceEstimate",
    "simulate_confidence",
    "SweepPoint",
    "sweep",
    "coupled_interval_ages",
    "switching_delta",
    "write_sweep_csv",
    "write_trajectory_csv",
    "SWEEP_CSV_HEADER",
    "TRAJECTORY_CSV_HEADER",
]

FOG = "fog"
CLOUD = "cloud"


@dataclass(frozen=True)
class UpdateLog:
    """Per-update bookkeeping: generation time, server, RTT, processing delay.

    Service time t_service = rtt + proc and delivery d = gen + t_service are
    derived exactly.  Generation times must be strictly increasing; the usual
    bootstrap convention is a first update with gen = -t_service so its result
    arrives exactly at time 0.
    """

    gen: np.ndarray
    server: tuple
    rtt: np.ndarray
    proc: np.ndarray
    t_service: np.ndarray = field(init=False)
    delivery: np.ndarray = field(init=False)

    def __post_init__(self):
        gen = np.asarray(self.gen, dtype=float)
        rtt = np.asarray(self.rtt, dtype=float)
        proc = np.asarray(self.proc, dtype=float)
        if not (gen.size == rtt.size == proc.size == len(self.server)):
            raise ValueError("update log arrays must have equal length")
        if gen.size == 0:
            raise ValueError("empty update log")
        if np.any(np.diff(gen) <= 0):
            raise ValueError("generation times must be strictly increasing")
        t_service = rtt + proc
        if np.any(t_service <= 0) or np.any(~np.isfinite(t_service)):
            raise ValueError("service times must be positive and finite")
        object.__setattr__(self, "gen", gen)
        object.__setattr__(self, "rtt", rtt)
        object.__setattr__(self, "proc", proc)
        object.__setattr__(self, "server", tuple(self.server))
        object.__setattr__(self, "t_service", t_service)
        object.__setattr__(self, "delivery", gen + t_service)

    def __len__(self) -> int:
        return int(self.gen.size)


@dataclass(frozen=True)
class AoITrajectory:
    """Piecewise-linear age over [0, horizon].

    ``resets`` holds (t, age-just-after-t) for every effective delivery in
    (0, horizon]; between resets the age grows with slope exactly 1 starting
    from ``initial_age`` at t = 0.
    """

    initial_age: float
    resets: np.ndarray  # shape (k, 2): columns (t, age_after)
    horizon: float

    def __post_init__(self):
        resets = np.asarray(self.resets, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "resets", resets)

    def segment_arrays(self):
        """(start, end, age_at_start) arrays covering [0, horizon]."""
        starts = np.concatenate(([0.0], self.resets[:, 0]))
        ages = np.concatenate(([self.initial_age], self.resets[:, 1]))
        ends = np.concatenate((starts[1:], [self.horizon]))
        return starts, ends, ages

    def age_at(self, t: float) -> float:
        """A(t); right-continuous at reset instants."""
        if t < 0 or t > self.horizon:
            raise ValueError("t outside horizon")
        starts, _, ages = self.segment_arrays()
        k = int(np.searchsorted(starts, t, side="right")) - 1
        return float(ages[k] + (t - starts[k]))

    def peak_age(self) -> float:
        starts, ends, ages = self.segment_arrays()
        return float(np.max(ages + (ends - starts)))


def compute_trajectory(log: UpdateLog, horizon: float) -> AoITrajectory:
    """Exact A(t) on [0, horizon] from an update log.

    A delivery creates a reset only if its generation time exceeds that of
    every update delivered earlier; late deliveries of stale updates leave
    the trajectory untouched.
    """
    if horizon <= 0:
        raise ValueError("empty horizon")
    d = log.delivery
    g = log.gen
    at_or_before_zero = d <= 0
    if not np.any(at_or_before_zero):
        raise ValueError("no update delivered by time zero")
    w0 = float(np.max(g[at_or_before_zero]))

    mask = (d > 0) & (d <= horizon)
    ds = d[mask]
    gs = g[mask]
    order = np.argsort(ds, kind="stable")
    ds = ds[order]
    gs = gs[order]
    runmax = np.maximum.accumulate(gs) if gs.size else gs
    prev = np.concatenate(([w0], runmax[:-1])) if gs.size else runmax
    keep = runmax > prev
    ts = ds[keep]
    ws = runmax[keep]
    if ts.size:
        # several effective deliveries at the same instant: keep the freshest
        last = np.append(ts[1:] != ts[:-1], True)
        ts = ts[last]
        ws = ws[last]
    resets = np.column_stack((ts, ts - ws)) if ts.size else np.empty((0, 2))
    return AoITrajectory(initial_age=-w0, resets=resets, horizon=horizon)


def _clipped_segments(traj: AoITrajectory, window):
    w0, w1 = (0.0, traj.horizon) if window is None else window
    if not (0.0 <= w0 < w1 <= traj.horizon):
        raise ValueError("window outside trajectory horizon")
    starts, ends, ages = traj.segment_arrays()
    lo = np.maximum(starts, w0)
    hi = np.minimum(ends, w1)
    keep = hi > lo
    age_lo = ages[keep] + (lo[keep] - starts[keep])
    return lo[keep], hi[keep], age_lo, w1 - w0


def confidence(traj: AoITrajectory, a_max: float, window=None) -> float:
    """Fraction of time with A(t) <= a_max, exact from the breakpoints."""
    if a_max <= 0:
        warnings.warn("non-positive age tolerance; confidence is 0", stacklevel=2)
        return 0.0
    lo, hi, age_lo, span = _clipped_segments(traj, window)
    ok = np.clip(a_max - age_lo, 0.0, hi - lo)
    return float(np.sum(ok) / span)


def time_average_age(traj: AoITrajectory, window=None) -> float:
    """Exact time average of A(t) over the window (default whole horizon)."""
    lo, hi, age_lo, span = _clipped_segments(traj, window)
    seg = hi - lo
    return float(np.sum(age_lo * seg + 0.5 * seg * seg) / span)


def _trajectory_area(traj: AoITrajectory) -> float:
    return time_average_age(traj) * traj.horizon


@dataclass(frozen=True)
class SimulationSettings:
    """Parameters for stochastic confidence estimation."""

    server: str = FOG
    gen_interval_ms: float = 20.0
    tau_fog_ms: float = 0.0
    tau_cloud_ms: float = 0.0
    a_max_ms: float = 50.0
    horizon_ms: float = 2000.0
    warmup_ms: Optional[float] = None  # None: 10 * max(interval, mean service)
    replications: int = 32
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.server not in (FOG, CLOUD):
            raise ValueError("server must be 'fog' or 'cloud'")
        if self.gen_interval_ms <= 0 or self.horizon_ms <= 0:
            raise ValueError("interval and horizon must be positive")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if self.warmup_ms is not None and self.warmup_ms < 0:
            raise ValueError("warmup must be non-negative")


@dataclass(frozen=True)
class ConfidenceEstimate:
    mean: float
    std_err: float
    n: int


def _resolve_warmup(settings, dist, tau) -> float:
    if settings.warmup_ms is not None:
        return settings.warmup_ms
    return 10.0 * max(settings.gen_interval_ms, dist.mean() + tau)


def _simulate_one(dist, tau, settings, warmup, rng) -> AoITrajectory:
    end = warmup + settings.horizon_ms
    k = int(np.floor(end / settings.gen_interval_ms))
    gens = settings.gen_interval_ms * np.arange(k + 1)
    # draw order: bootstrap first, then updates by generation time
    r_boot = sample_latency(dist, rng)
    rtts = np.array([sample_latency(dist, rng) for _ in range(k + 1)])
    gen = np.concatenate(([-(r_boot + tau)], gens))
    rtt = np.concatenate(([r_boot], rtts))
    proc = np.full(k + 2, tau)
    server = (settings.server,) * (k + 2)
    log = UpdateLog(gen=gen, server=server, rtt=rtt, proc=proc)
    return compute_trajectory(log, end)


def _replication_confidence(args):
    dist, tau, settings, warmup, rep = args
    rng = substream(settings.seed, "replication", rep)
    traj = _simulate_one(dist, tau, settings, warmup, rng)
    return confidence(
        traj, settings.a_max_ms, window=(warmup, warmup + settings.horizon_ms)
    )


def simulate_confidence(
    fog: EmpiricalDistribution,
    cloud: EmpiricalDistribution,
    settings: SimulationSettings,
) -> ConfidenceEstimate:
    """Monte Carlo confidence for a fixed server choice.

    RTTs are i.i.d. draws from the chosen server's distribution, one per
    update; the measurement window starts after the warm-up so the bootstrap
    transient does not bias the estimate.  Replications use independent,
    deterministic substreams of the seed and are reduced in replication
    order, so thread count never changes the result.
    """
    dist = fog if settings.server == FOG else cloud
    tau = settings.tau_fog_ms if settings.server == FOG else settings.tau_cloud_ms
    warmup = _resolve_warmup(settings, dist, tau)
    jobs = [(dist, tau, settings, warmup, rep) for rep in range(settings.replications)]
    if settings.threads > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            values = np.array(list(pool.map(_replication_confidence, jobs)))
    else:
        values = np.array([_replication_confidence(j) for j in jobs])
    mean = float(np.mean(values))
    if values.size > 1:
        std_err = float(np.std(values, ddof=1) / np.sqrt(values.size))
    else:
        std_err = 0.0
    return ConfidenceEstimate(mean=mean, std_err=std_err, n=int(values.size))


@dataclass(frozen=True)
class SweepPoint:
    axis_value: float
    confidence: float
    std_err: float
    n_replications: int


_SWEEP_AXES = ("generation_interval", "processing_delay", "a_max")


def sweep(
    axis: str,
    values: Sequence[float],
    fog: EmpiricalDistribution,
    cloud: EmpiricalDistribution,
    settings: SimulationSettings,
) -> list[SweepPoint]:
    """One confidence estimate per axis point.

    Every point reuses the same seed, i.e. common random numbers: sweeping
    the processing delay or the tolerance then compares coupled replications,
    which makes the monotone trends exact rather than statistical.
    """
    if axis not in _SWEEP_AXES:
        raise ValueError("invalid sweep axis")
    values = list(values)
    if not values or any(b < a for a, b in zip(values, values[1:])):
        raise ValueError("invalid sweep range")
    points = []
    for v in values:
        if axis == "generation_interval":
            s = replace(settings, gen_interval_ms=float(v))
        elif axis == "processing_delay":
            s = replace(settings, tau_fog_ms=float(v), tau_cloud_ms=float(v))
        else:
            s = replace(settings, a_max_ms=float(v))
        est = simulate_confidence(fog, cloud, s)
        points.append(SweepPoint(float(v), est.mean, est.std_err, est.n))
    return points


def coupled_interval_ages(
    dist: EmpiricalDistribution,
    tau: float,
    intervals: Sequence[float],
    horizon_ms: float,
    warmup_ms: float,
    replications: int,
    seed: int,
):
    """Time-average age per generation interval under superset coupling.

    All intervals must be integer multiples of the finest one.  Within a
    replication, every generation instant on the fine lattice gets a single
    RTT draw which is shared by all schedules containing that instant, so a
    shorter interval's update set is a superset of a longer interval's with
    identical service times on shared updates -- the age is then pointwise
    lower for the shorter interval, by construction.

    Returns an array of shape (replications, len(intervals)).
    """
    intervals = [float(v) for v in intervals]
    base = min(intervals)
    mult = [iv / base for iv in intervals]
    if any(abs(m - round(m)) > 1e-9 for m in mult):
        raise ValueError("intervals must be integer multiples of the finest")
    mult = [int(round(m)) for m in mult]
    end = warmup_ms + horizon_ms
    n_fine = int(np.floor(end / base)) + 1
    out = np.empty((replications, len(intervals)))
    for rep in range(replications):
        rng = substream(seed, "replication", rep)
        r_boot = sample_latency(dist, rng)
        fine_rtts = np.array([sample_latency(dist, rng) for _ in range(n_fine)])
        for j, m in enumerate(mult):
            idx = np.arange(0, n_fine, m)
            gen = np.concatenate(([-(r_boot + tau)], base * idx))
            rtt = np.concatenate(([r_boot], fine_rtts[idx]))
            proc = np.full(idx.size + 1, tau)
            log = UpdateLog(gen, ("fog",) * (idx.size + 1), rtt, proc)
            traj = compute_trajectory(log, end)
            out[rep, j] = time_average_age(traj, window=(warmup_ms, end))
    return out


def switching_delta(t_fog: float, t_cloud: float, gen_interval: float) -> float:
    """AoI area saved by sending one update through the fog instead of the
    cloud, deterministic service times.

    Computed by exact trajectory differencing: two identical periodic update
    logs, one with the middle update switched to the fog service time, are
    integrated over a window that contains the whole divergence region.  In
    the low-frequency regime the result equals gen_interval * (t_cloud -
    t_fog); when the fog-served update overtakes its cloud-served predecessor
    the saved area is strictly larger.
    """
    if t_fog >= t_cloud:
        raise ValueError("no switching gain")
    if min(t_fog, gen_interval) <= 0:
        raise ValueError("service times and interval must be positive")
    n_updates = 5
    switch_at = 2
    gens = gen_interval * np.arange(n_updates)
    window = float(gens[-1] + t_cloud)

    def build(service_times):
        gen = np.concatenate(([-t_cloud], gens))
        rtt = np.concatenate(([t_cloud], service_times))
        proc = np.zeros(n_updates + 1)
        server = (CLOUD,) * (n_updates + 1)
        return UpdateLog(gen, server, rtt, proc)

    all_cloud = np.full(n_updates, t_cloud)
    switched = all_cloud.copy()
    switched[switch_at] = t_fog
    base = compute_trajectory(build(all_cloud), window)
    alt = compute_trajectory(build(switched), window)
    return _trajectory_area(base) - _trajectory_area(alt)


SWEEP_CSV_HEADER = "axis_value,confidence,std_err,n_replications"
TRAJECTORY_CSV_HEADER = "t_ms,age_ms"


def write_sweep_csv(points: Sequence[SweepPoint], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SWEEP_CSV_HEADER + "\n")
        for p in points:
            fh.write(f"{p.axis_value!r},{p.confidence!r},{p.std_err!r},{p.n_replications}\n")


def write_trajectory_csv(traj: AoITrajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRAJECTORY_CSV_HEADER + "\n")
        fh.write(f"{0.0!r},{traj.initial_age!r}\n")
        for t, age in traj.resets:
            fh.write(f"{t!r},{age!r}\n")
