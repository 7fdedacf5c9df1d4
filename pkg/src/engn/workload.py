"""Performance workload derived from the protocol.

A flow is the attach message sequence of the variant.  Every message costs
service at its destination's processor pool and at each relaying TF.  The
cost table gives that cost as an integer number of phases; each phase is
an exponential stage at rate ``rates[action(kind)]``, and a cost of 0
makes the stage free.  Phases are queued separately, so a pool's service
rate depends only on the stage, which keeps the network in product form:
FIFO simulation and the counting CTMC describe the same process.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from engn.model import Component, PerfConfig, Role, Variant
from engn.protocol.messages import ACTION_OF_KIND, role_of


@dataclass(frozen=True)
class Stage:
    pool: int
    action: str
    rate: float
    kind: str
    role: str


@dataclass(frozen=True)
class Network:
    """Closed (or open) queueing network: pools, a stage sequence and the workload."""

    pool_names: tuple
    pool_servers: tuple
    stages: tuple
    think_rate: float
    population: int | None = None
    arrival_rate: float | None = None

    @property
    def stage_pool(self):
        return np.array([s.pool for s in self.stages], dtype=np.int64)

    @property
    def stage_rate(self):
        return np.array([s.rate for s in self.stages], dtype=np.float64)

    @property
    def servers(self):
        return np.array(self.pool_servers, dtype=np.int64)

    def demands(self) -> np.ndarray:
        """Total mean service demand per pool (seconds per flow)."""
        d = np.zeros(len(self.pool_names))
        for s in self.stages:
            d[s.pool] += 1.0 / s.rate
        return d

    def knee(self) -> float:
        """Population where the asymptotic throughput bounds cross."""
        d = self.demands()
        xmax = float(np.min(np.array(self.pool_servers) / np.maximum(d, 1e-300)))
        return xmax * (1.0 / self.think_rate + float(d.sum()))

    def bottleneck(self) -> str:
        d = self.demands()
        return self.pool_names[int(np.argmax(d / np.array(self.pool_servers)))]


def pool_of_role(role: Role, pools) -> str:
    """Performance pool that serves a protocol role."""
    if role in (Role.NASSF, Role.MSSF):
        return Component.SSF.value
    if role in (Role.NASSSUF, Role.MSSSUF):
        return Component.SSSUF.value if Component.SSSUF.value in pools else Component.SSF.value
    if role is Role.APP:
        return Component.SSF.value if Component.SSF.value in pools else Component.TCF.value
    return role.value


def cost_of(cost_table, role: Role, kind: str) -> int:
    row = cost_table.get(role.value, {})
    if kind in row:
        return row[kind]
    return row.get("*", 1)


@lru_cache(maxsize=8)
def flow_messages(variant: Variant, flow: str = "attach"):
    from engn.protocol.world import canonical_trace

    return tuple(canonical_trace(flow, variant).messages)


def build_network(cfg: PerfConfig, flow: str = "attach") -> Network:
    pools = list(cfg.processors)
    stages = []
    for m in flow_messages(cfg.variant, flow):
        action = ACTION_OF_KIND[m.kind]
        if action not in cfg.rates:
            from engn.errors import MissingRate
            raise MissingRate(f"flow {flow!r} needs a rate for {action!r}")
        visits = [(role_of(n), n) for n in m.via] + [(role_of(m.dst), m.dst)]
        for role, _node in visits:
            phases = cost_of(cfg.cost_table, role, m.kind.value)
            pool = pools.index(pool_of_role(role, pools))
            stages += [Stage(pool, action, cfg.rates[action], m.kind.value, role.value)] * phases
    return Network(
        pool_names=tuple(pools),
        pool_servers=tuple(cfg.processors[p] for p in pools),
        stages=tuple(stages),
        think_rate=cfg.think_rate,
        population=cfg.population,
        arrival_rate=cfg.arrival_rate,
    )


def phase_counts(cfg: PerfConfig, flow: str = "attach") -> dict:
    """Number of service phases per pool for one flow."""
    net = build_network(cfg, flow)
    counts = {p: 0 for p in net.pool_names}
    for s in net.stages:
        counts[net.pool_names[s.pool]] += 1
    return counts
