"""Domain types, topology and scenario configuration.

Everything here is plain data.  A scenario document is a JSON object with
the top-level keys ``variant``, ``processors``, ``rates``, ``population``,
``topology`` and ``costTable``; :func:`validate_scenario` turns it into a
:class:`PerfConfig` or raises a :class:`~engn.errors.ConfigError`.
"""

from __future__ import annotations

import copy
import enum
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

from engn import errors


class Variant(str, enum.Enum):
    NGN = "ngn"
    ENGN = "engn"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise errors.ConfigError(f"unknown variant {value!r}; expected 'ngn' or 'engn'") from None


class Stratum(str, enum.Enum):
    USER_SIDE = "UserSide"
    TRANSPORT = "Transport"
    SERVICE = "Service"
    APPLICATION = "Application"


class Role(str, enum.Enum):
    """Protocol-level function roles (message endpoints)."""

    EU = "EU"
    TF = "TF"
    TCF = "TCF"
    NASSF = "NASSF"
    NASSSUF = "NASSSuF"
    MSSF = "MSSF"
    MSSSUF = "MSSSuF"
    APP = "APP"


class Component(str, enum.Enum):
    """Performance-model processor pools."""

    EU = "EU"
    TF = "TF"
    TCF = "TCF"
    SSF = "SSF"
    SSSUF = "SSSuF"


class RegState(str, enum.Enum):
    DETACHED = "Detached"
    AUTHENTICATING = "Authenticating"
    REGISTERED = "Registered"


class AuthState(str, enum.Enum):
    UNAUTHENTICATED = "Unauthenticated"
    AUTHENTICATED = "Authenticated"


class MobilityMode(str, enum.Enum):
    NONE = "None"
    HOST_BASED = "HostBased"
    NETWORK_BASED = "NetworkBased"


class ResourceState(str, enum.Enum):
    REQUESTED = "Requested"
    ALLOCATED = "Allocated"
    RELEASED = "Released"


# Role sets per variant.  The performance component list is what the
# budget split iterates over; SSSuF is an optional split-out pool in eNGN.
COMPONENTS = {
    Variant.NGN: (Component.EU, Component.TF, Component.TCF),
    Variant.ENGN: (Component.EU, Component.TF, Component.TCF, Component.SSF),
}
OPTIONAL_COMPONENTS = {
    Variant.NGN: (),
    Variant.ENGN: (Component.SSSUF,),
}
ARCHITECTURE_ROLES = {
    Variant.NGN: (Component.EU, Component.TF, Component.TCF),
    Variant.ENGN: (Component.EU, Component.TF, Component.TCF, Component.SSF, Component.SSSUF),
}
PROTOCOL_ROLES = {
    Variant.NGN: (Role.EU, Role.TF, Role.TCF, Role.APP),
    Variant.ENGN: (Role.EU, Role.TF, Role.TCF, Role.NASSF, Role.NASSSUF,
                   Role.MSSF, Role.MSSSUF, Role.APP),
}

# Placement of each role; roles absent from a variant have no entry.
PLACEMENT = {
    Variant.NGN: {
        Role.EU: Stratum.USER_SIDE,
        Role.TF: Stratum.TRANSPORT,
        Role.TCF: Stratum.TRANSPORT,
        Role.APP: Stratum.APPLICATION,
    },
    Variant.ENGN: {
        Role.EU: Stratum.USER_SIDE,
        Role.TF: Stratum.TRANSPORT,
        Role.TCF: Stratum.TRANSPORT,
        Role.NASSF: Stratum.APPLICATION,
        Role.MSSF: Stratum.APPLICATION,
        Role.NASSSUF: Stratum.SERVICE,
        Role.MSSSUF: Stratum.SERVICE,
        Role.APP: Stratum.APPLICATION,
    },
}

# High-level functions hosted by the transport control function.
TCF_CAPABILITIES = {
    Variant.NGN: frozenset({"RACF", "NACF", "MMCF"}),
    Variant.ENGN: frozenset({"RACF"}),
}


def stratum_of(role, variant) -> Stratum:
    variant = Variant.parse(variant)
    try:
        return PLACEMENT[variant][Role(role)]
    except KeyError:
        raise errors.UnknownRoleForVariant(f"role {role} does not exist in {variant.value}") from None


ACTION_KINDS = ("think", "setup", "resource", "auth", "config",
                "mobility", "handover", "signaling", "data")

# Actions exercised by the attach workload; every config must rate them.
ATTACH_ACTIONS = ("setup", "resource", "auth", "config")
MOBILITY_ACTIONS = ("mobility", "handover", "signaling")

TOP_LEVEL_KEYS = ("variant", "processors", "rates", "population", "topology", "costTable")


# -- records ----------------------------------------------------------------

@dataclass(frozen=True)
class EndUserRecord:
    logical_id: int
    permanent_ip: str | None = None
    temporary_ip: str | None = None
    attachment_point: str | None = None
    reg_state: RegState = RegState.DETACHED
    mobility_mode: MobilityMode = MobilityMode.NONE
    auth_state: AuthState = AuthState.UNAUTHENTICATED
    active_sessions: frozenset = frozenset()

    def __post_init__(self):
        if self.temporary_ip is not None and self.reg_state is not RegState.REGISTERED:
            raise ValueError("temporary IP present on a user that is not registered")
        if self.mobility_mode is not MobilityMode.NONE and self.reg_state is not RegState.REGISTERED:
            raise ValueError("mobility mode set on a user that is not registered")


@dataclass(frozen=True)
class Session:
    id: int
    user: int
    network_end: str
    path: tuple
    qos: float = 1.0
    state: ResourceState = ResourceState.REQUESTED

    def __post_init__(self):
        if not self.path:
            raise ValueError("session path must be non-empty")
        if len(set(self.path)) != len(self.path):
            raise ValueError("session path must be acyclic")


@dataclass(frozen=True)
class AccessPoint:
    neighbors: tuple
    path: tuple


@dataclass(frozen=True)
class Topology:
    access_points: dict
    tf_nodes: dict

    def neighbors(self, ap):
        return self.access_points[ap].neighbors

    def path(self, ap):
        return self.access_points[ap].path

    def capacity(self, tf):
        return self.tf_nodes[tf]

    def ap_index(self, ap):
        return sorted(self.access_points).index(ap) + 1

    def first_ap(self):
        return sorted(self.access_points)[0]

    def to_dict(self):
        return {
            "accessPoints": {
                ap: {"neighbors": list(spec.neighbors), "path": list(spec.path)}
                for ap, spec in sorted(self.access_points.items())
            },
            "tfNodes": {tf: {"capacity": cap} for tf, cap in sorted(self.tf_nodes.items())},
        }

    @classmethod
    def default(cls):
        return parse_topology(DEFAULT_TOPOLOGY)


DEFAULT_TOPOLOGY = {
    "accessPoints": {
        "AP1": {"neighbors": ["AP2", "AP3"], "path": ["TF-1"]},
        "AP2": {"neighbors": ["AP1", "AP3"], "path": ["TF-2"]},
        "AP3": {"neighbors": ["AP1", "AP2"], "path": ["TF-3"]},
    },
    "tfNodes": {
        "TF-1": {"capacity": 100.0},
        "TF-2": {"capacity": 100.0},
        "TF-3": {"capacity": 100.0},
    },
}


@dataclass(frozen=True)
class PerfConfig:
    """A validated scenario.  Treat as immutable."""

    variant: Variant
    processors: dict
    rates: dict
    population: int | None = None
    arrival_rate: float | None = None
    topology: Topology = field(default_factory=Topology.default)
    cost_table: dict = field(default_factory=dict)

    @property
    def think_rate(self) -> float:
        return self.rates["think"]

    @property
    def total_processors(self) -> int:
        return sum(self.processors.values())

    @property
    def is_open(self) -> bool:
        return self.arrival_rate is not None

    def with_population(self, k: int) -> "PerfConfig":
        return replace(self, population=int(k), arrival_rate=None)

    def with_processors(self, processors: Mapping) -> "PerfConfig":
        return validate_scenario({**self.to_dict(), "processors": dict(processors)})

    def to_dict(self) -> dict:
        population = {"arrivalRate": self.arrival_rate} if self.is_open else self.population
        return {
            "variant": self.variant.value,
            "processors": dict(self.processors),
            "rates": dict(self.rates),
            "population": population,
            "topology": self.topology.to_dict(),
            "costTable": {role: dict(kinds) for role, kinds in self.cost_table.items()},
        }


@dataclass
class MetricsReport:
    throughput: float
    utilization: dict
    mean_response: float
    completions: int
    ci_half_width: dict = field(default_factory=dict)
    mean_in_system: float | None = None
    observed_time: float | None = None
    engine: str = "des"
    events: object = None

    def __post_init__(self):
        for role, u in self.utilization.items():
            if not -1e-12 <= u <= 1 + 1e-12:
                raise ValueError(f"utilization of {role} outside [0, 1]: {u}")
        if self.throughput < 0:
            raise ValueError("negative throughput")

    def to_dict(self) -> dict:
        out = {
            "engine": self.engine,
            "throughput": self.throughput,
            "mean_response": self.mean_response,
            "completions": self.completions,
            "utilization": dict(sorted(self.utilization.items())),
            "ci_half_width": dict(sorted(self.ci_half_width.items())),
        }
        if self.mean_in_system is not None:
            out["mean_in_system"] = self.mean_in_system
        if self.observed_time is not None:
            out["observed_time"] = self.observed_time
        return out


# -- validation -------------------------------------------------------------

def parse_topology(raw) -> Topology:
    if not isinstance(raw, Mapping):
        raise errors.InvalidTopology("topology must be an object")
    unknown = set(raw) - {"accessPoints", "tfNodes"}
    if unknown:
        raise errors.UnknownKey(f"unknown topology keys: {sorted(unknown)}")
    aps_raw = raw.get("accessPoints") or {}
    tfs_raw = raw.get("tfNodes") or {}
    if not aps_raw:
        raise errors.InvalidTopology("topology needs at least one access point")

    tf_nodes = {}
    for tf, spec in tfs_raw.items():
        if not str(tf).startswith("TF-"):
            raise errors.InvalidTopology(f"transport function ids must start with 'TF-': {tf!r}")
        cap = spec.get("capacity") if isinstance(spec, Mapping) else spec
        if not isinstance(cap, (int, float)) or isinstance(cap, bool) or cap <= 0:
            raise errors.InvalidTopology(f"capacity of {tf} must be a positive number")
        tf_nodes[tf] = float(cap)

    access_points = {}
    for ap, spec in aps_raw.items():
        if not isinstance(spec, Mapping):
            raise errors.InvalidTopology(f"access point {ap} must be an object")
        unknown = set(spec) - {"neighbors", "path"}
        if unknown:
            raise errors.UnknownKey(f"unknown keys for access point {ap}: {sorted(unknown)}")
        path = tuple(spec.get("path") or ())
        if not path:
            raise errors.DisconnectedTopology(f"access point {ap} reaches no transport function")
        if len(set(path)) != len(path):
            raise errors.InvalidTopology(f"path of {ap} is cyclic")
        missing = [tf for tf in path if tf not in tf_nodes]
        if missing:
            raise errors.DisconnectedTopology(f"access point {ap} wired to undeclared TFs {missing}")
        access_points[ap] = AccessPoint(tuple(spec.get("neighbors") or ()), path)

    for ap, spec in access_points.items():
        for nb in spec.neighbors:
            if nb not in access_points:
                raise errors.DisconnectedTopology(f"{ap} lists unknown neighbor {nb}")
            if nb == ap:
                raise errors.InvalidTopology(f"{ap} lists itself as a neighbor")
            if ap not in access_points[nb].neighbors:
                raise errors.InvalidTopology(f"neighbor relation {ap}-{nb} is not symmetric")

    # the neighbor graph must be connected
    start = sorted(access_points)[0]
    seen, stack = {start}, [start]
    while stack:
        for nb in access_points[stack.pop()].neighbors:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != len(access_points):
        raise errors.DisconnectedTopology(
            f"access points {sorted(set(access_points) - seen)} unreachable from {start}")
    return Topology(access_points, tf_nodes)


def _positive_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value) and value > 0


def validate_scenario(cfg) -> PerfConfig:
    """Check a raw scenario document and resolve it into a :class:`PerfConfig`.

    Accepts a mapping (parsed JSON) or an already validated config; the
    latter round-trips to an equal value.
    """
    from engn.protocol.messages import MessageKind

    if isinstance(cfg, PerfConfig):
        cfg = cfg.to_dict()
    if not isinstance(cfg, Mapping):
        raise errors.ConfigError("scenario must be a JSON object")
    unknown = set(cfg) - set(TOP_LEVEL_KEYS)
    if unknown:
        raise errors.UnknownKey(f"unknown top-level keys: {sorted(unknown)}")
    for key in ("variant", "processors", "rates", "population"):
        if key not in cfg:
            raise errors.ConfigError(f"missing required key {key!r}")

    variant = Variant.parse(cfg["variant"])

    processors = {}
    allowed = {c.value for c in ARCHITECTURE_ROLES[variant]}
    raw_proc = cfg["processors"]
    if not isinstance(raw_proc, Mapping):
        raise errors.ConfigError("processors must be an object")
    for name, count in raw_proc.items():
        if name not in allowed:
            raise errors.UnknownRoleForVariant(f"{name} is not a component of {variant.value}")
        if not isinstance(count, int) or isinstance(count, bool) or count <= 0:
            raise errors.ConfigError(f"processor count for {name} must be a positive integer")
        processors[name] = count
    for comp in COMPONENTS[variant]:
        if comp.value not in processors:
            raise errors.MissingRole(f"{variant.value} needs processors for {comp.value}")
    order = [c.value for c in ARCHITECTURE_ROLES[variant]]
    processors = {name: processors[name] for name in order if name in processors}

    raw_rates = cfg["rates"]
    if not isinstance(raw_rates, Mapping):
        raise errors.ConfigError("rates must be an object")
    rates = {}
    for action, rate in raw_rates.items():
        if action not in ACTION_KINDS:
            raise errors.UnknownKey(f"unknown action kind {action!r}")
        if not _positive_number(rate):
            raise errors.NonPositiveRate(f"rate for {action!r} must be > 0, got {rate!r}")
        rates[action] = float(rate)
    for action in ("think",) + ATTACH_ACTIONS:
        if action not in rates:
            raise errors.MissingRate(f"rates must define {action!r}")
    rates = {a: rates[a] for a in ACTION_KINDS if a in rates}

    population, arrival_rate = None, None
    raw_pop = cfg["population"]
    if isinstance(raw_pop, Mapping):
        if set(raw_pop) != {"arrivalRate"}:
            raise errors.UnknownKey("open population takes exactly one key, 'arrivalRate'")
        if not _positive_number(raw_pop["arrivalRate"]):
            raise errors.NonPositiveRate("arrivalRate must be > 0")
        arrival_rate = float(raw_pop["arrivalRate"])
    elif isinstance(raw_pop, int) and not isinstance(raw_pop, bool) and raw_pop >= 0:
        population = raw_pop
    else:
        raise errors.ConfigError("population must be a non-negative integer or {'arrivalRate': x}")

    topology = parse_topology(cfg.get("topology") or DEFAULT_TOPOLOGY)

    cost_table = {}
    roles_ok = {r.value for r in PROTOCOL_ROLES[variant]}
    kinds_ok = {k.value for k in MessageKind} | {"*"}
    raw_cost = cfg.get("costTable") or {}
    if not isinstance(raw_cost, Mapping):
        raise errors.ConfigError("costTable must be an object")
    for role, entries in raw_cost.items():
        if role not in roles_ok:
            raise errors.UnknownRoleForVariant(f"cost table names role {role} absent from {variant.value}")
        if not isinstance(entries, Mapping):
            raise errors.ConfigError(f"costTable.{role} must be an object")
        row = {}
        for kind, demand in entries.items():
            if kind not in kinds_ok:
                raise errors.UnknownKey(f"unknown message kind {kind!r} in costTable.{role}")
            if not isinstance(demand, int) or isinstance(demand, bool) or demand < 0:
                raise errors.ConfigError(f"costTable.{role}.{kind} must be a non-negative integer")
            row[kind] = demand
        cost_table[role] = dict(sorted(row.items()))
    cost_table = dict(sorted(cost_table.items()))

    return PerfConfig(
        variant=variant,
        processors=processors,
        rates=rates,
        population=population,
        arrival_rate=arrival_rate,
        topology=topology,
        cost_table=cost_table,
    )


def equal_budget_split(total_processors: int, variant, weights: Mapping | None = None) -> dict:
    """Allocate an integer processor budget across a variant's components.

    Without weights every component gets ``total // n`` processors and the
    remainder goes to TF.  With weights the split is proportional
    (largest-remainder rounding, ties to TF and then component order).
    """
    variant = Variant.parse(variant)
    if weights is None:
        names = [c.value for c in COMPONENTS[variant]]
        base, extra = divmod(int(total_processors), len(names))
        if base == 0:
            raise errors.BudgetTooSmall(
                f"{variant.value} needs at least {len(names)} processors, got {total_processors}")
        split = {name: base for name in names}
        split[Component.TF.value] += extra
        return split

    allowed = [c.value for c in ARCHITECTURE_ROLES[variant]]
    for name, w in weights.items():
        if name not in allowed:
            raise errors.UnknownRoleForVariant(f"{name} is not a component of {variant.value}")
        if not _positive_number(w):
            raise errors.ConfigError(f"weight for {name} must be positive")
    names = [n for n in allowed if n in weights]
    for comp in COMPONENTS[variant]:
        if comp.value not in names:
            raise errors.MissingRole(f"weights must cover {comp.value}")
    wsum = sum(weights[n] for n in names)
    exact = {n: total_processors * weights[n] / wsum for n in names}
    split = {n: int(math.floor(exact[n])) for n in names}
    left = total_processors - sum(split.values())
    order = sorted(names, key=lambda n: (-(exact[n] - split[n]), n != "TF", names.index(n)))
    for n in order[:left]:
        split[n] += 1
    starved = [n for n, c in split.items() if c == 0]
    if starved:
        raise errors.BudgetTooSmall(f"budget {total_processors} leaves {starved} without processors")
    return split


def apply_overrides(raw: Mapping, overrides) -> dict:
    """Apply ``dotted.path=value`` overrides to a raw scenario document.

    Values are parsed as JSON when possible, otherwise kept as strings.
    """
    doc = copy.deepcopy(dict(raw))
    for item in overrides or ():
        if "=" not in item:
            raise errors.ConfigError(f"override {item!r} is not of the form key=value")
        path, text = item.split("=", 1)
        keys = path.strip().split(".")
        if keys[0] not in TOP_LEVEL_KEYS:
            raise errors.UnknownKey(f"override targets undocumented key {keys[0]!r}")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = doc
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                node[key] = {}
            node = node[key]
        node[keys[-1]] = value
    return doc


def load_raw(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise errors.ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise errors.ConfigError(f"{path} is not valid JSON: {exc}") from exc


def load_config(path, overrides=()) -> PerfConfig:
    return validate_scenario(apply_overrides(load_raw(path), overrides))


def shipped_raw(name: str) -> dict:
    """Raw document of a config shipped in ``engn/data`` (name without .json)."""
    text = resources.files("engn").joinpath("data", f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


SHIPPED_CONFIGS = ("ngn", "engn", "repairman", "tandem", "mm1_open", "mmc_open")


def default_config(variant, budget: int | None = None, population: int | None = None) -> PerfConfig:
    """Shipped default scenario for a variant, optionally re-split to ``budget``."""
    variant = Variant.parse(variant)
    raw = shipped_raw(variant.value)
    if budget is not None:
        raw["processors"] = equal_budget_split(budget, variant)
    if population is not None:
        raw["population"] = population
    return validate_scenario(raw)
