"""Compiled event loop of the simulator (numba).

Customers move through a fixed stage sequence; stage ``s`` is served at
pool ``stage_pool[s]`` with rate ``stage_rate[s]``.  Pools are FIFO
multi-server queues kept as linked lists through ``q_next``.  The event
list is a binary heap ordered by (time, insertion seq).

Random draws are counter based: the think time before flow ``f`` uses key
``(f, 0)`` and its stage ``s`` uses ``(f, s + 1)``; open-mode arrivals use
a separate stream keyed by arrival index.  The arithmetic mirrors
:mod:`engn.rng`.
"""

import numpy as np
from numba import njit

THINK_END = 0
SERVICE_END = 1
ARRIVAL = 2

# event log kinds
LOG_ARRIVAL = 0
LOG_SERVICE_START = 1
LOG_SERVICE_END = 2
LOG_THINK_END = 3

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_G1 = np.uint64(0x9E3779B97F4A7C15)
_G2 = np.uint64((2 * 0x9E3779B97F4A7C15) & ((1 << 64) - 1))
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def keyed_uniform(seed, stream, flow, stage):
    h = mix64(seed ^ mix64(stream))
    h = mix64(h ^ mix64(np.uint64(flow) + _G1))
    h = mix64(h ^ mix64(np.uint64(stage) + _G2))
    return np.float64((h >> _S11) + _ONE) * _INV53


@njit(cache=True)
def _heap_push(ht, hs, hc, hk, n, t, seq, cust, kind):
    i = n
    ht[i] = t
    hs[i] = seq
    hc[i] = cust
    hk[i] = kind
    while i > 0:
        p = (i - 1) // 2
        if ht[p] < ht[i] or (ht[p] == ht[i] and hs[p] < hs[i]):
            break
        ht[p], ht[i] = ht[i], ht[p]
        hs[p], hs[i] = hs[i], hs[p]
        hc[p], hc[i] = hc[i], hc[p]
        hk[p], hk[i] = hk[i], hk[p]
        i = p
    return n + 1


@njit(cache=True)
def _heap_pop(ht, hs, hc, hk, n):
    t, seq, cust, kind = ht[0], hs[0], hc[0], hk[0]
    n -= 1
    ht[0], hs[0], hc[0], hk[0] = ht[n], hs[n], hc[n], hk[n]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= n:
            break
        r = l + 1
        m = l
        if r < n and (ht[r] < ht[l] or (ht[r] == ht[l] and hs[r] < hs[l])):
            m = r
        if ht[i] < ht[m] or (ht[i] == ht[m] and hs[i] < hs[m]):
            break
        ht[m], ht[i] = ht[i], ht[m]
        hs[m], hs[i] = hs[i], hs[m]
        hc[m], hc[i] = hc[i], hc[m]
        hk[m], hk[i] = hk[i], hk[m]
        i = m
    return t, seq, cust, kind, n


@njit(cache=True)
def _grow_f(a, n):
    b = np.empty(n, a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def _log(log_t, log_i, n_log, now, kind, flow, stage, pool, cust):
    if n_log == log_t.shape[0]:
        log_t = _grow_f(log_t, 2 * n_log)
        grown = np.empty((2 * n_log, 5), np.int64)
        grown[:n_log] = log_i[:n_log]
        log_i = grown
    log_t[n_log] = now
    log_i[n_log, 0] = kind
    log_i[n_log, 1] = flow
    log_i[n_log, 2] = stage
    log_i[n_log, 3] = pool
    log_i[n_log, 4] = cust
    return log_t, log_i, n_log + 1


@njit(cache=True)
def run_core(stage_pool, stage_rate, pool_c, think_rate, population, arrival_rate,
             seed, stream_flow, stream_arrival, target, horizon, warm_frac, n_batches,
             log_events):
    """Simulate; see :func:`engn.desim.run_sim` for the meaning of the outputs."""
    n_stage = stage_pool.shape[0]
    n_pool = pool_c.shape[0]
    open_mode = arrival_rate > 0.0
    seed = np.uint64(seed)
    stream_flow = np.uint64(stream_flow)
    stream_arrival = np.uint64(stream_arrival)

    cap = population if not open_mode else 1024
    if cap < 1:
        cap = 1
    cust_stage = np.full(cap, -1, np.int64)
    cust_flow = np.zeros(cap, np.int64)
    cust_start = np.zeros(cap, np.float64)
    q_next = np.full(cap, -1, np.int64)
    free = np.empty(cap, np.int64)
    n_free = 0
    if open_mode:
        for i in range(cap):
            free[n_free] = cap - 1 - i
            n_free += 1

    hcap = cap + 2
    ht = np.empty(hcap, np.float64)
    hs = np.empty(hcap, np.int64)
    hc = np.empty(hcap, np.int64)
    hk = np.empty(hcap, np.int64)
    hn = 0
    seq = 0

    busy = np.zeros(n_pool, np.int64)
    q_head = np.full(n_pool, -1, np.int64)
    q_tail = np.full(n_pool, -1, np.int64)

    busy_area = np.zeros(n_pool, np.float64)
    insys_area = 0.0
    resp_sum = 0.0
    completions = 0
    in_system = 0
    next_flow = 0
    n_arrivals = 0

    snap_t = np.zeros(n_batches + 1, np.float64)
    snap_comp = np.zeros(n_batches + 1, np.int64)
    snap_resp = np.zeros(n_batches + 1, np.float64)
    snap_insys = np.zeros(n_batches + 1, np.float64)
    snap_busy = np.zeros((n_batches + 1, n_pool), np.float64)
    n_snap = 0

    lcap = 1024 if log_events else 1
    log_t = np.empty(lcap, np.float64)
    log_i = np.empty((lcap, 5), np.int64)  # kind, flow, stage, pool, customer
    n_log = 0

    by_count = target > 0
    warm_n = int(warm_frac * target) if by_count else 0
    warm_t = warm_frac * horizon if not by_count else 0.0

    # initial events
    if open_mode:
        u = keyed_uniform(seed, stream_arrival, 0, 0)
        hn = _heap_push(ht, hs, hc, hk, hn, -np.log(u) / arrival_rate, seq, -1, ARRIVAL)
        seq += 1
    else:
        for c in range(population):
            f = next_flow
            next_flow += 1
            cust_flow[c] = f
            u = keyed_uniform(seed, stream_flow, f, 0)
            hn = _heap_push(ht, hs, hc, hk, hn, -np.log(u) / think_rate, seq, c, THINK_END)
            seq += 1

    if by_count and warm_n == 0:
        n_snap = 1  # snapshot 0 is the all-zero state at t = 0
    now = 0.0
    while hn > 0:
        t_next = ht[0]
        if not by_count:
            # time-based batch boundaries
            while n_snap <= n_batches:
                bound = warm_t + (horizon - warm_t) * n_snap / n_batches
                if t_next <= bound:
                    break
                dt = bound - now
                for p in range(n_pool):
                    busy_area[p] += busy[p] * dt
                insys_area += in_system * dt
                now = bound
                snap_t[n_snap] = now
                snap_comp[n_snap] = completions
                snap_resp[n_snap] = resp_sum
                snap_insys[n_snap] = insys_area
                snap_busy[n_snap, :] = busy_area
                n_snap += 1
            if n_snap > n_batches:
                break
        t, _, c, kind, hn = _heap_pop(ht, hs, hc, hk, hn)
        dt = t - now
        for p in range(n_pool):
            busy_area[p] += busy[p] * dt
        insys_area += in_system * dt
        now = t

        advance = -1  # customer that should move to the stage in cust_stage[c]
        if kind == ARRIVAL:
            if n_free == 0:
                old = cust_stage.shape[0]
                new = old * 2
                cust_stage = _grow_f(cust_stage, new)
                cust_flow = _grow_f(cust_flow, new)
                cust_start = _grow_f(cust_start, new)
                q_next = _grow_f(q_next, new)
                free = _grow_f(free, new)
                for i in range(new - 1, old - 1, -1):
                    free[n_free] = i
                    n_free += 1
                ht = _grow_f(ht, new + 2)
                hs = _grow_f(hs, new + 2)
                hc = _grow_f(hc, new + 2)
                hk = _grow_f(hk, new + 2)
            n_free -= 1
            c = free[n_free]
            cust_flow[c] = next_flow
            next_flow += 1
            n_arrivals += 1
            u = keyed_uniform(seed, stream_arrival, n_arrivals, 0)
            hn = _heap_push(ht, hs, hc, hk, hn, now - np.log(u) / arrival_rate, seq, -1, ARRIVAL)
            seq += 1
            cust_stage[c] = 0
            cust_start[c] = now
            in_system += 1
            advance = c
        elif kind == THINK_END:
            if log_events:
                log_t, log_i, n_log = _log(log_t, log_i, n_log, now, LOG_THINK_END, cust_flow[c], -1, -1, c)
            cust_stage[c] = 0
            cust_start[c] = now
            in_system += 1
            advance = c
        else:  # SERVICE_END
            s = cust_stage[c]
            p = stage_pool[s]
            if log_events:
                log_t, log_i, n_log = _log(log_t, log_i, n_log, now, LOG_SERVICE_END, cust_flow[c], s, p, c)
            # hand the server to the head of the queue, if any
            h = q_head[p]
            if h >= 0:
                q_head[p] = q_next[h]
                if q_head[p] < 0:
                    q_tail[p] = -1
                q_next[h] = -1
                sh = cust_stage[h]
                u = keyed_uniform(seed, stream_flow, cust_flow[h], sh + 1)
                hn = _heap_push(ht, hs, hc, hk, hn, now - np.log(u) / stage_rate[sh], seq, h, SERVICE_END)
                seq += 1
                if log_events:
                    log_t, log_i, n_log = _log(log_t, log_i, n_log, now, LOG_SERVICE_START, cust_flow[h], sh, p, h)
            else:
                busy[p] -= 1
            cust_stage[c] = s + 1
            advance = c

        # the customer enters its next stage: start service, queue, or
        # finish the flow
        if advance >= 0:
            c = advance
            s = cust_stage[c]
            if s < n_stage:
                p = stage_pool[s]
                if log_events:
                    log_t, log_i, n_log = _log(log_t, log_i, n_log, now, LOG_ARRIVAL, cust_flow[c], s, p, c)
                if busy[p] < pool_c[p]:
                    busy[p] += 1
                    u = keyed_uniform(seed, stream_flow, cust_flow[c], s + 1)
                    hn = _heap_push(ht, hs, hc, hk, hn, now - np.log(u) / stage_rate[s], seq, c, SERVICE_END)
                    seq += 1
                    if log_events:
                        log_t, log_i, n_log = _log(log_t, log_i, n_log, now, LOG_SERVICE_START, cust_flow[c], s, p, c)
                else:
                    q_next[c] = -1
                    if q_tail[p] >= 0:
                        q_next[q_tail[p]] = c
                    else:
                        q_head[p] = c
                    q_tail[p] = c
            else:
                completions += 1
                resp_sum += now - cust_start[c]
                in_system -= 1
                cust_stage[c] = -1
                if open_mode:
                    free[n_free] = c
                    n_free += 1
                else:
                    f = next_flow
                    next_flow += 1
                    cust_flow[c] = f
                    u = keyed_uniform(seed, stream_flow, f, 0)
                    hn = _heap_push(ht, hs, hc, hk, hn, now - np.log(u) / think_rate, seq, c, THINK_END)
                    seq += 1
                if by_count:
                    if completions == warm_n and n_snap == 0:
                        n_snap = 1
                        snap_t[0] = now
                        snap_comp[0] = completions
                        snap_resp[0] = resp_sum
                        snap_insys[0] = insys_area
                        snap_busy[0, :] = busy_area
                    elif completions > warm_n:
                        bound = warm_n + ((target - warm_n) * n_snap) // n_batches
                        if completions >= bound:
                            snap_t[n_snap] = now
                            snap_comp[n_snap] = completions
                            snap_resp[n_snap] = resp_sum
                            snap_insys[n_snap] = insys_area
                            snap_busy[n_snap, :] = busy_area
                            n_snap += 1
                            if n_snap > n_batches:
                                break

    return (snap_t, snap_comp, snap_resp, snap_insys, snap_busy, n_snap, now, completions,
            log_t[:n_log], log_i[:n_log])
