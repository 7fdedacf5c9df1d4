"""Closed-form queueing results used as independent test oracles."""

import math


def mm1(lam, mu):
    rho = lam / mu
    return {"utilization": rho, "mean_response": 1.0 / (mu - lam), "mean_in_system": rho / (1 - rho)}


def erlang_c(c, a):
    """Probability of waiting in M/M/c with offered load ``a = lam/mu``."""
    rho = a / c
    top = a ** c / math.factorial(c) / (1 - rho)
    return top / (sum(a ** k / math.factorial(k) for k in range(c)) + top)


def mmc(lam, mu, c):
    a = lam / mu
    wait = erlang_c(c, a) / (c * mu - lam)
    return {"utilization": a / c, "mean_response": wait + 1.0 / mu, "wait_probability": erlang_c(c, a)}


def repairman(K, think, serve, c=1):
    """Finite-source queue: K users, exponential think and service, c servers."""
    weights = []
    for n in range(K + 1):
        w = math.factorial(K) / math.factorial(K - n) * (think / serve) ** n
        w /= math.factorial(n) if n <= c else math.factorial(c) * c ** (n - c)
        weights.append(w)
    total = sum(weights)
    p = [w / total for w in weights]
    busy = sum(min(n, c) * pn for n, pn in enumerate(p))
    lam = serve * busy
    in_system = sum(n * pn for n, pn in enumerate(p))
    return {"p": p, "throughput": lam, "utilization": busy / c,
            "mean_in_system": in_system, "mean_response": in_system / lam}
