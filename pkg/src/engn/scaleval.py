"""Population sweeps, saturation detection and the productivity-based scalability metric.

Productivity of a configuration at a load point is ``F = lambda * f(T) / C``
with value function ``f(T) = 1 / (1 + T / T_ref)`` and cost ``C`` equal to
the total processor count.  The scalability factor between a basic and a
scaled configuration is ``psi = F_scaled / F_basic``, each taken at its
own saturation point.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from engn import errors
from engn.desim import StopRule, run_sim
from engn.markov import DEFAULT_CAP, analyze
from engn.model import ARCHITECTURE_ROLES, Component, PerfConfig, Variant, equal_budget_split
from engn.workload import build_network

EPSILON = 0.05
UTIL_THRESHOLD = 0.99
KNEE_STEPS = (0.5, 0.625, 0.75, 0.875, 1.0, 1.25, 1.5, 2.0, 3.0)
POOL_ORDER = [c.value for c in Component]


@dataclass
class CurvePoint:
    K: int
    throughput: float
    mean_response: float
    utilization: dict
    ci: dict = field(default_factory=dict)

    @property
    def max_utilization(self) -> float:
        return max(self.utilization.values()) if self.utilization else 0.0

    def to_dict(self):
        return {"K": self.K, "throughput": self.throughput, "mean_response": self.mean_response,
                "utilization": dict(self.utilization), "ci": dict(self.ci)}


@dataclass(frozen=True)
class Saturation:
    k_sat: int
    index: int
    unsaturated: bool = False


def check_grid(grid) -> list:
    grid = [int(k) for k in grid]
    if not grid:
        raise errors.InvalidGrid("empty population grid")
    if grid[0] < 1:
        raise errors.InvalidGrid("populations must be positive")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise errors.InvalidGrid("population grid must be strictly increasing")
    return grid


def parse_grid(text: str) -> list:
    """``A:B[:STEP]`` inclusive range (step defaults to 1)."""
    parts = text.split(":")
    try:
        nums = [int(p) for p in parts]
    except ValueError:
        raise errors.InvalidGrid(f"grid {text!r} is not of the form A:B[:STEP]") from None
    if len(nums) not in (2, 3) or (len(nums) == 3 and nums[2] <= 0):
        raise errors.InvalidGrid(f"grid {text!r} is not of the form A:B[:STEP]")
    a, b = nums[0], nums[1]
    step = nums[2] if len(nums) == 3 else 1
    return check_grid(range(a, b + 1, step))


def knee_grid(cfgs, kmax: int = 2000) -> list:
    """Geometric ramp up to half the knee, then knee multiples.

    The knee ``K*`` is where the asymptotic throughput bounds cross.  With
    several configs the union of their grids is returned.
    """
    if isinstance(cfgs, PerfConfig):
        cfgs = [cfgs]
    points = set()
    for cfg in cfgs:
        knee = build_network(cfg).knee()
        k = 1
        while k < 0.5 * knee and k <= kmax:
            points.add(k)
            k *= 2
        for a in KNEE_STEPS:
            points.add(min(kmax, max(1, int(round(a * knee)))))
    return sorted(points)


def _point(args):
    cfg, k, engine, seed, completions, state_cap = args
    c = cfg.with_population(k)
    try:
        if engine == "ctmc":
            rep = analyze(c, state_cap)
        else:
            rep = run_sim(c, seed, StopRule(target_completions=completions))
    except errors.EngnError as exc:
        raise errors.SweepPointError(k, exc) from exc
    return CurvePoint(k, rep.throughput, rep.mean_response, dict(rep.utilization),
                      dict(rep.ci_half_width))


def sweep_population(cfg: PerfConfig, grid, engine: str = "des", seed: int = 0,
                     completions: int = 100_000, state_cap: int = DEFAULT_CAP, jobs: int = 1) -> list:
    """One curve point per population in ``grid``.

    Every point uses the same seed (common random numbers), so curves are
    smooth in K and reproducible.  ``jobs > 1`` runs points in worker
    processes; results are keyed by K and do not depend on scheduling.
    """
    grid = check_grid(grid)
    if engine not in ("des", "ctmc"):
        raise errors.ConfigError(f"unknown engine {engine!r}")
    if cfg.is_open:
        raise errors.ConfigError("population sweeps need a closed workload")
    tasks = [(cfg, k, engine, seed, completions, state_cap) for k in grid]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = {p.K: p for p in pool.map(_point, tasks)}
    else:
        results = {p.K: p for p in map(_point, tasks)}
    return [results[k] for k in grid]


def _series(curve):
    if isinstance(curve, tuple) and len(curve) == 2:
        ks, lam = curve
        return [int(k) for k in ks], [float(x) for x in lam]
    return [p.K for p in curve], [p.throughput for p in curve]


def detect_saturation(curve, epsilon: float = EPSILON) -> Saturation:
    """First K whose marginal throughput per user drops below ``epsilon`` times the unloaded slope.

    ``curve`` is a list of CurvePoints or a ``(K, lambda)`` pair of sequences.
    """
    ks, lam = _series(curve)
    if len(ks) < 3:
        raise errors.TooFewPoints(f"need at least 3 points, got {len(ks)}")
    threshold = epsilon * lam[0] / ks[0]
    for i in range(1, len(ks)):
        if (lam[i] - lam[i - 1]) / (ks[i] - ks[i - 1]) < threshold:
            return Saturation(ks[i], i)
    return Saturation(ks[-1], len(ks) - 1, unsaturated=True)


def detect_utilization_saturation(curve, threshold: float = UTIL_THRESHOLD) -> Saturation:
    """First K at which some pool's utilization reaches ``threshold``."""
    if not curve:
        raise errors.TooFewPoints("empty curve")
    for i, p in enumerate(curve):
        if p.max_utilization >= threshold:
            return Saturation(p.K, i)
    return Saturation(curve[-1].K, len(curve) - 1, unsaturated=True)


def productivity(throughput: float, response: float, cost: float, t_ref: float) -> float:
    if not cost > 0:
        raise errors.NonPositiveCost(f"cost must be > 0, got {cost!r}")
    if not t_ref > 0:
        raise ValueError("reference response time must be > 0")
    if response < 0:
        raise ValueError("response time must be >= 0")
    return throughput / (1.0 + response / t_ref) / cost


def scalability_metric(basic: CurvePoint, scaled: CurvePoint, cost_basic: float, cost_scaled: float,
                       t_ref: float) -> float:
    f_basic = productivity(basic.throughput, basic.mean_response, cost_basic, t_ref)
    f_scaled = productivity(scaled.throughput, scaled.mean_response, cost_scaled, t_ref)
    if f_basic <= 0:
        raise errors.ScaleEvalError("basic productivity is zero")
    return f_scaled / f_basic


def _rel_ci(point: CurvePoint, t_ref: float) -> float:
    """First-order relative 95% half-width of the productivity at a DES point."""
    ci_l = point.ci.get("throughput", 0.0) or 0.0
    ci_t = point.ci.get("mean_response", 0.0) or 0.0
    if math.isnan(ci_l) or math.isnan(ci_t) or point.throughput <= 0:
        return 0.0
    rel_l = ci_l / point.throughput
    rel_t = ci_t / (t_ref + point.mean_response)
    return math.hypot(rel_l, rel_t)


def reference_response(cfg: PerfConfig) -> float:
    """Mean response of a single user (exact), the default T_ref."""
    return analyze(cfg.with_population(1)).mean_response


def scaled_config(cfg: PerfConfig, factor: int = 2) -> PerfConfig:
    """Scale the processor budget: equal split again when the basic split was the default,
    otherwise multiply every pool."""
    total = cfg.total_processors
    try:
        default = equal_budget_split(total, cfg.variant)
    except errors.BudgetTooSmall:
        default = None
    if dict(cfg.processors) == default:
        return cfg.with_processors(equal_budget_split(factor * total, cfg.variant))
    return cfg.with_processors({p: factor * c for p, c in cfg.processors.items()})


def evaluate(cfg: PerfConfig, grid, engine="des", seed=0, completions=100_000,
             epsilon=EPSILON, util_threshold=UTIL_THRESHOLD, jobs=1) -> dict:
    """Sweep one configuration and summarise its saturation behaviour."""
    curve = sweep_population(cfg, grid, engine, seed, completions, jobs=jobs)
    sat = detect_saturation(curve, epsilon)
    usat = detect_utilization_saturation(curve, util_threshold)
    at = curve[sat.index]
    bottleneck = max(at.utilization, key=lambda p: (at.utilization[p], -POOL_ORDER.index(p)))
    return {
        "budget": cfg.total_processors,
        "processors": dict(cfg.processors),
        "kSat": sat.k_sat,
        "unsaturated": sat.unsaturated,
        "kSatUtil": None if usat.unsaturated else usat.k_sat,
        "aligned": (not usat.unsaturated) and abs(sat.index - usat.index) <= 1,
        "bottleneck": bottleneck,
        "point": at,
        "curve": curve,
    }


def _check_pair(cfg_ngn: PerfConfig, cfg_engn: PerfConfig):
    if cfg_ngn.variant is not Variant.NGN or cfg_engn.variant is not Variant.ENGN:
        raise errors.ConfigError("compare takes an NGN config and an eNGN config, in that order")
    if cfg_ngn.total_processors != cfg_engn.total_processors:
        raise errors.UnequalBudget(
            f"processor budgets differ: {cfg_ngn.total_processors} vs {cfg_engn.total_processors}")
    for action in set(cfg_ngn.rates) & set(cfg_engn.rates):
        if cfg_ngn.rates[action] != cfg_engn.rates[action]:
            raise errors.ConfigError(f"rate for {action!r} differs between the two configs")


def compare_variants(cfg_ngn: PerfConfig, cfg_engn: PerfConfig, grid=None, seed: int = 0,
                     engine: str = "des", completions: int = 100_000, epsilon: float = EPSILON,
                     util_threshold: float = UTIL_THRESHOLD, t_ref: float | None = None,
                     kmax: int = 2000, jobs: int = 1) -> dict:
    """NGN versus eNGN at an equal processor budget N and at 2N.

    Without an explicit grid each configuration is swept on its own
    knee-relative grid.
    """
    _check_pair(cfg_ngn, cfg_engn)
    report = {"budget": cfg_ngn.total_processors, "seed": seed, "engine": engine,
              "epsilon": epsilon, "utilThreshold": util_threshold,
              "completionsPerPoint": completions if engine == "des" else None}
    for name, basic in (("ngn", cfg_ngn), ("engn", cfg_engn)):
        scaled = scaled_config(basic)
        tr = t_ref if t_ref is not None else reference_response(basic)
        entry = {"Tref": tr}
        for label, cfg in (("basic", basic), ("scaled", scaled)):
            g = check_grid(grid) if grid is not None else knee_grid(cfg, kmax)
            res = evaluate(cfg, g, engine, seed, completions, epsilon, util_threshold, jobs)
            p = res["point"]
            res["F"] = productivity(p.throughput, p.mean_response, cfg.total_processors, tr)
            res["relCiF"] = _rel_ci(p, tr)
            res["grid"] = g
            entry[label] = res
        entry["psi"] = entry["scaled"]["F"] / entry["basic"]["F"]
        entry["psiCi"] = entry["psi"] * math.hypot(entry["scaled"]["relCiF"], entry["basic"]["relCiF"])
        report[name] = entry
    n, e = report["ngn"], report["engn"]
    report["kSatOrdering"] = {lab: e[lab]["kSat"] > n[lab]["kSat"] for lab in ("basic", "scaled")}
    report["psiOrdering"] = (e["psi"] > n["psi"]
                             or abs(e["psi"] - n["psi"]) <= e["psiCi"] + n["psiCi"])
    report["aligned"] = all(report[v][lab]["aligned"] for v in ("ngn", "engn")
                            for lab in ("basic", "scaled"))
    return report


def report_json(report: dict) -> dict:
    """Comparison report without the curves, in plain JSON types."""
    out = {k: v for k, v in report.items() if k not in ("ngn", "engn")}
    for v in ("ngn", "engn"):
        entry = {"Tref": report[v]["Tref"], "psi": report[v]["psi"], "psiCi": report[v]["psiCi"]}
        for lab in ("basic", "scaled"):
            r = report[v][lab]
            entry[lab] = {
                "budget": r["budget"], "processors": r["processors"], "kSat": r["kSat"],
                "unsaturated": r["unsaturated"], "kSatUtil": r["kSatUtil"], "aligned": r["aligned"],
                "bottleneck": r["bottleneck"], "F": r["F"], "grid": r["grid"],
                "atSaturation": r["point"].to_dict(),
            }
        out[v] = entry
    return out


def curves_csv(rows) -> str:
    """CSV text for ``(variant, config, curve)`` triples, one row per point."""
    rows = list(rows)
    pools = [p for p in POOL_ORDER if any(p in pt.utilization for _, _, c in rows for pt in c)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "config", "K", "throughput", "mean_response"]
               + [f"util_{p}" for p in pools] + ["ci_throughput"])
    for variant, config, curve in rows:
        for pt in curve:
            ci = pt.ci.get("throughput")
            w.writerow([variant, config, pt.K, repr(float(pt.throughput)), repr(float(pt.mean_response))]
                       + [repr(float(pt.utilization[p])) if p in pt.utilization else "" for p in pools]
                       + ["" if ci is None else repr(float(ci))])
    return buf.getvalue()


def comparison_rows(report: dict):
    for v in ("ngn", "engn"):
        for lab in ("basic", "scaled"):
            yield v, lab, report[v][lab]["curve"]
