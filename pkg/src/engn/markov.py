"""Exact CTMC analysis of the closed staged network (counting abstraction).

A state counts users per phase: ``(thinking, n_1, ..., n_S)``.  Users are
identical, so this lumping is exact.  Stage ``s`` served by pool ``p``
with ``c`` servers completes at apparent rate ``r_s * n_s * min(N_p, c) / N_p``
where ``N_p`` is the number of users at pool ``p``.  This is the
product-form (BCMP) FIFO network the simulator runs, since every phase at
a pool is exponential with a pool-independent rate per stage.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from engn import errors
from engn.model import ACTION_KINDS, MetricsReport, PerfConfig, validate_scenario
from engn.workload import Network, build_network

DIRECT_LIMIT = 20_000
DEFAULT_CAP = 1_000_000
COMPLETE = "complete"


@dataclass
class CtmcModel:
    """Finite labeled CTMC.  ``Q`` is CSR; transitions are kept as triplets."""

    Q: sp.csr_matrix
    rows: np.ndarray
    cols: np.ndarray
    rates: np.ndarray
    labels: np.ndarray              # index into ``label_names`` per transition
    label_names: tuple
    completes: np.ndarray           # bool per transition: a flow finishes
    states: np.ndarray | None = None
    pool_names: tuple = ()
    pool_servers: tuple = ()
    busy: np.ndarray | None = None  # (n_states, n_pools) busy servers
    in_system: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]

    def exit_rates(self) -> np.ndarray:
        return -self.Q.diagonal()

    def uniformization_rate(self) -> float:
        return 1.02 * float(self.exit_rates().max()) if self.n_states else 0.0

    @classmethod
    def from_transitions(cls, n_states, transitions, busy=None, pool_names=(), pool_servers=()):
        """Build a chain from ``(src, dst, rate, label)`` tuples."""
        names = sorted({t[3] for t in transitions})
        rows = np.array([t[0] for t in transitions], dtype=np.int64)
        cols = np.array([t[1] for t in transitions], dtype=np.int64)
        rates = np.array([t[2] for t in transitions], dtype=float)
        labels = np.array([names.index(t[3]) for t in transitions], dtype=np.int64)
        return cls(_generator(n_states, rows, cols, rates), rows, cols, rates, labels, tuple(names),
                   np.zeros(len(rows), dtype=bool), None, tuple(pool_names), tuple(pool_servers),
                   None if busy is None else np.asarray(busy, dtype=float))

    def to_json(self) -> dict:
        return {
            "pools": {n: int(c) for n, c in zip(self.pool_names, self.pool_servers)},
            "stages": self.meta.get("stages", []),
            "states": self.states.tolist() if self.states is not None else list(range(self.n_states)),
            "transitions": [[int(r), int(c), float(q), self.label_names[l]]
                            for r, c, q, l in zip(self.rows, self.cols, self.rates, self.labels)],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")) + "\n"


def _generator(n, rows, cols, rates):
    off = sp.coo_matrix((rates, (rows, cols)), shape=(n, n)).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def _network(cfg) -> Network:
    if isinstance(cfg, Network):
        return cfg
    if not isinstance(cfg, PerfConfig):
        cfg = validate_scenario(cfg)
    if cfg.is_open:
        raise errors.MarkovError("the CTMC engine handles closed populations only")
    return build_network(cfg)


def build_ctmc(cfg, state_cap: int = DEFAULT_CAP) -> CtmcModel:
    """Enumerate the reachable counting states breadth-first from all-thinking."""
    net = _network(cfg)
    k = int(net.population or 0)
    n_stage = len(net.stages)
    stage_pool = [s.pool for s in net.stages]
    stage_rate = [s.rate for s in net.stages]
    servers = list(net.pool_servers)
    n_pool = len(servers)
    names = ["think"] + sorted({s.action for s in net.stages})
    stage_label = [names.index(s.action) for s in net.stages]

    start = (k,) + (0,) * n_stage
    index = {start: 0}
    order = [start]
    queue = deque([start])
    rows, cols, rates, labels, done = [], [], [], [], []
    while queue:
        state = queue.popleft()
        i = index[state]
        at_pool = [0] * n_pool
        for s in range(n_stage):
            at_pool[stage_pool[s]] += state[s + 1]
        moves = []
        if state[0] > 0 and n_stage > 0:
            moves.append((0, 1, net.think_rate * state[0], 0, False))
        for s in range(n_stage):
            n = state[s + 1]
            if n == 0:
                continue
            p = stage_pool[s]
            share = min(at_pool[p], servers[p]) / at_pool[p]
            last = s == n_stage - 1
            moves.append((s + 1, 0 if last else s + 2, stage_rate[s] * n * share, stage_label[s], last))
        for frm, to, rate, label, fin in moves:
            nxt = list(state)
            nxt[frm] -= 1
            nxt[to] += 1
            nxt = tuple(nxt)
            j = index.get(nxt)
            if j is None:
                if len(order) >= state_cap:
                    raise errors.StateSpaceExceeded(state_cap)
                j = len(order)
                index[nxt] = j
                order.append(nxt)
                queue.append(nxt)
            rows.append(i)
            cols.append(j)
            rates.append(rate)
            labels.append(label)
            done.append(fin)

    states = np.array(order, dtype=np.int64).reshape(len(order), n_stage + 1)
    members = np.zeros((n_stage, n_pool))
    for s, p in enumerate(stage_pool):
        members[s, p] = 1.0
    at = states[:, 1:] @ members if n_stage else np.zeros((len(order), n_pool))
    busy = np.minimum(at, np.array(servers, dtype=float))
    rows = np.array(rows, dtype=np.int64)
    cols = np.array(cols, dtype=np.int64)
    rates = np.array(rates, dtype=float)
    return CtmcModel(
        Q=_generator(len(order), rows, cols, rates),
        rows=rows, cols=cols, rates=rates,
        labels=np.array(labels, dtype=np.int64),
        label_names=tuple(names),
        completes=np.array(done, dtype=bool),
        states=states,
        pool_names=net.pool_names,
        pool_servers=net.pool_servers,
        busy=busy,
        in_system=(k - states[:, 0]).astype(float),
        meta={"population": k, "stages": [[net.pool_names[s.pool], s.action, s.rate] for s in net.stages]},
    )


@njit(cache=True)
def _gauss_seidel(indptr, indices, data, diag, x, sweeps):
    # one block of Gauss-Seidel sweeps on A x = 0 with A = Q^T (CSR)
    n = x.shape[0]
    for _ in range(sweeps):
        for i in range(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    acc += data[k] * x[j]
            x[i] = -acc / diag[i]
        x /= x.sum()
    return x


def _check_irreducible(ctmc):
    n = ctmc.n_states
    if n == 1:
        return
    count, _ = connected_components(ctmc.Q, directed=True, connection="strong")
    if count != 1:
        raise errors.NotIrreducible(f"chain splits into {count} strongly connected classes")


def steady_state(ctmc: CtmcModel, tol: float = 1e-10, method: str | None = None,
                 max_iter: int = 200_000) -> np.ndarray:
    """Stationary distribution: direct sparse solve or iteration on the uniformized chain."""
    n = ctmc.n_states
    if n == 0:
        raise errors.MarkovError("empty chain")
    _check_irreducible(ctmc)
    if n == 1:
        return np.ones(1)
    method = method or ("direct" if n <= DIRECT_LIMIT else "gauss-seidel")
    Q = ctmc.Q
    if method == "direct":
        # pin pi_0 = 1 and solve the remaining balance equations; this
        # keeps the system sparse, unlike a dense normalisation row
        A = Q.T.tocsc()
        x = spsolve(A[1:, 1:].tocsc(), -A[1:, 0].toarray().ravel())
        pi = np.concatenate([[1.0], np.atleast_1d(x)])
    elif method == "power":
        lam = ctmc.uniformization_rate()
        P = (sp.identity(n, format="csr") + Q / lam).T.tocsr()
        pi = np.full(n, 1.0 / n)
        it = 0
        while True:
            for _ in range(50):
                pi = P @ pi
            it += 50
            pi /= pi.sum()
            res = float(np.abs(pi @ Q).max())
            if res <= tol:
                break
            if it >= max_iter:
                raise errors.NoConvergence(tol, it, res)
    elif method == "gauss-seidel":
        A = Q.T.tocsr()
        diag = A.diagonal()
        pi = np.full(n, 1.0 / n)
        it = 0
        while True:
            pi = _gauss_seidel(A.indptr, A.indices, A.data, diag, pi, 10)
            it += 10
            res = float(np.abs(Q.T @ pi).max())
            if res <= tol:
                break
            if it >= max_iter:
                raise errors.NoConvergence(tol, it, res)
    else:
        raise ValueError(f"unknown method {method!r}")
    pi = np.where(pi < 0, 0.0, pi)
    pi /= pi.sum()
    return pi


def _known_action(ctmc, action):
    if action == COMPLETE or action in ctmc.label_names or action in ACTION_KINDS:
        return
    raise errors.UnknownAction(f"unknown action {action!r}")


def ctmc_throughput(ctmc: CtmcModel, pi, action: str = COMPLETE) -> float:
    """Expected rate of transitions labeled ``action`` (``"complete"``: finished flows)."""
    _known_action(ctmc, action)
    if action == COMPLETE:
        mask = ctmc.completes
    elif action in ctmc.label_names:
        mask = ctmc.labels == ctmc.label_names.index(action)
    else:
        return 0.0
    return float(np.sum(np.asarray(pi)[ctmc.rows[mask]] * ctmc.rates[mask]))


def ctmc_utilization(ctmc: CtmcModel, pi, role: str) -> float:
    name = getattr(role, "value", role)
    if name not in ctmc.pool_names:
        raise errors.UnknownRole(f"no processor pool {name!r}")
    p = ctmc.pool_names.index(name)
    return float(np.asarray(pi) @ ctmc.busy[:, p] / ctmc.pool_servers[p])


def analyze(cfg, state_cap: int = DEFAULT_CAP, tol: float = 1e-10) -> MetricsReport:
    """Exact steady-state metrics of a closed scenario."""
    ctmc = build_ctmc(cfg, state_cap)
    pi = steady_state(ctmc, tol)
    lam = ctmc_throughput(ctmc, pi)
    mean_in = float(pi @ ctmc.in_system)
    return MetricsReport(
        throughput=lam,
        utilization={n: min(max(ctmc_utilization(ctmc, pi, n), 0.0), 1.0) for n in ctmc.pool_names},
        mean_response=mean_in / lam if lam > 0 else float("nan"),
        completions=0,
        ci_half_width={},
        mean_in_system=mean_in,
        engine="ctmc",
    )
