"""Discrete-event simulation of the staged flow over FIFO processor pools.

Closed workload: K users alternate an exponential think time with one
flow through the stage sequence built by :mod:`engn.workload`.  An open
mode (Poisson arrivals) exists for validation against queueing formulas.

Statistics exclude a warmup prefix and are split into equal batches;
confidence half-widths come from batch means with Student-t quantiles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from engn import errors, rng
from engn._desim_core import (LOG_ARRIVAL, LOG_SERVICE_END, LOG_SERVICE_START, LOG_THINK_END,
                              run_core)
from engn.model import MetricsReport, PerfConfig, validate_scenario
from engn.workload import Network, build_network

EVENT_KINDS = {
    LOG_ARRIVAL: "Arrival",
    LOG_SERVICE_START: "ServiceStart",
    LOG_SERVICE_END: "ServiceEnd",
    LOG_THINK_END: "ThinkEnd",
}


@dataclass(frozen=True)
class StopRule:
    target_completions: int | None = None
    horizon: float | None = None
    warmup_fraction: float = 0.2
    batches: int = 20

    def __post_init__(self):
        if (self.target_completions is None) == (self.horizon is None):
            raise ValueError("set exactly one of target_completions or horizon")
        if self.target_completions is not None and self.target_completions <= 0:
            raise ValueError("target_completions must be positive")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.batches < 2:
            raise ValueError("need at least 2 batches")
        if self.target_completions is not None:
            measured = self.target_completions - int(self.warmup_fraction * self.target_completions)
            if measured < self.batches:
                raise ValueError("fewer measured completions than batches")


def sample_exponential(rate: float, rng_state):
    """Inverse-transform exponential draw; ``rng_state`` must offer ``uniform()``.

    Returns ``(duration, rng_state)``.  The generator object is advanced in
    place and returned for chaining.
    """
    if not (rate > 0 and math.isfinite(rate)):
        raise errors.NonPositiveRate(f"rate must be > 0, got {rate!r}")
    u = rng_state.uniform()
    return -math.log(u) / rate, rng_state


def _t_half_width(values) -> float:
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2:
        return float("nan")
    sd = float(np.std(values, ddof=1))
    return float(stats.t.ppf(0.975, n - 1) * sd / math.sqrt(n))


def batch_means(samples, batch_count: int):
    """Non-overlapping batch means: returns ``(mean, 95% half-width)``.

    Trailing samples that do not fill a whole batch are dropped.
    """
    samples = np.asarray(samples, dtype=float)
    if batch_count < 2 or len(samples) < 2 * batch_count:
        raise errors.TooFewSamples(
            f"need at least {2 * batch_count} samples for {batch_count} batches, got {len(samples)}")
    size = len(samples) // batch_count
    means = samples[: size * batch_count].reshape(batch_count, size).mean(axis=1)
    return float(means.mean()), _t_half_width(means)


def littles_law_check(metrics, mean_in_system: float, eps: float = 1e-12) -> float:
    """Relative residual ``|L - lambda*T| / max(L, eps)``."""
    lam = metrics.throughput
    if lam == 0 and mean_in_system == 0:
        return 0.0
    t = metrics.mean_response if lam > 0 else 0.0
    return abs(mean_in_system - lam * t) / max(mean_in_system, eps)


@dataclass
class EventLog:
    times: np.ndarray
    fields: np.ndarray      # columns: kind, flow, stage, pool, customer
    pool_names: tuple

    def __len__(self):
        return len(self.times)

    def records(self):
        for t, (kind, flow, stage, pool, cust) in zip(self.times.tolist(), self.fields.tolist()):
            yield {
                "time": t,
                "kind": EVENT_KINDS[kind],
                "flow": flow,
                "stage": stage,
                "node": self.pool_names[pool] if pool >= 0 else None,
                "customer": cust,
            }

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
                       for r in self.records())


def simulate_network(net: Network, seed: int = 0, stop: StopRule | None = None,
                     log_events: bool = False) -> MetricsReport:
    stop = stop or StopRule(target_completions=100_000)
    closed = net.arrival_rate is None
    if closed and not net.population:
        raise errors.NoProgress("population is zero: no flow can complete")
    if not net.stages:
        raise errors.NoProgress("the flow has no service stages")
    target = stop.target_completions or 0
    horizon = stop.horizon or 0.0
    out = run_core(
        net.stage_pool, net.stage_rate, net.servers,
        float(net.think_rate), int(net.population or 0), float(net.arrival_rate or 0.0),
        np.uint64(seed & rng.MASK64), np.uint64(rng.STREAM_FLOW), np.uint64(rng.STREAM_ARRIVAL),
        int(target), float(horizon), float(stop.warmup_fraction), int(stop.batches), bool(log_events),
    )
    snap_t, snap_comp, snap_resp, snap_insys, snap_busy, n_snap, end, _total, log_t, log_i = out
    if n_snap < stop.batches + 1:
        raise errors.NoProgress(f"run ended after {n_snap} of {stop.batches + 1} snapshots")
    dt = np.diff(snap_t)
    dc = np.diff(snap_comp)
    dr = np.diff(snap_resp)
    dbusy = np.diff(snap_busy, axis=0)
    duration = float(snap_t[-1] - snap_t[0])
    done = int(snap_comp[-1] - snap_comp[0])
    if done == 0 or duration <= 0:
        raise errors.NoProgress("no flow completed in the measurement window")
    servers = np.asarray(net.pool_servers, dtype=float)

    throughput = done / duration
    mean_response = float(snap_resp[-1] - snap_resp[0]) / done
    util = (snap_busy[-1] - snap_busy[0]) / (servers * duration)
    mean_in_system = float(snap_insys[-1] - snap_insys[0]) / duration

    ci = {"throughput": _t_half_width(dc / dt)}
    ok = dc > 0
    ci["mean_response"] = _t_half_width(dr[ok] / dc[ok]) if ok.sum() >= 2 else float("nan")
    batch_util = dbusy / (servers * dt[:, None])
    for i, name in enumerate(net.pool_names):
        ci[f"util_{name}"] = _t_half_width(batch_util[:, i])
    ci["mean_in_system"] = _t_half_width(np.diff(snap_insys) / dt)

    report = MetricsReport(
        throughput=throughput,
        utilization={name: float(min(max(u, 0.0), 1.0)) for name, u in zip(net.pool_names, util)},
        mean_response=mean_response,
        completions=done,
        ci_half_width=ci,
        mean_in_system=mean_in_system,
        observed_time=duration,
        engine="des",
    )
    if log_events:
        report.events = EventLog(log_t, log_i, net.pool_names)
    return report


def run_sim(cfg, seed: int = 0, stop: StopRule | None = None, log_events: bool = False,
            flow: str = "attach") -> MetricsReport:
    """Simulate a validated scenario (or raw document) and report steady-state metrics."""
    if not isinstance(cfg, PerfConfig):
        cfg = validate_scenario(cfg)
    return simulate_network(build_network(cfg, flow), seed, stop, log_events)
