"""Check the simulator against exact answers.

The performance model is a closed product-form network, so the counting
CTMC gives exact steady-state metrics for small populations.  Here the
simulator is compared with it, and the open validation fixtures with the
M/M/1 and Erlang-C formulas.

Run:  python3 demos/engine_crosscheck.py
"""

import math

from engn.desim import StopRule, run_sim
from engn.markov import analyze, build_ctmc
from engn.model import shipped_raw, validate_scenario

stop = StopRule(target_completions=200_000)

print("closed configs: simulated vs exact")
for name, k in (("repairman", None), ("tandem", None), ("ngn", 3), ("engn", 4)):
    raw = shipped_raw(name)
    if k is not None:
        raw["population"] = k
    cfg = validate_scenario(raw)
    exact = analyze(cfg)
    des = run_sim(cfg, seed=1, stop=stop)
    n = build_ctmc(cfg).n_states
    print(f"  {name:<9} K={cfg.population:<3} states={n:<6} "
          f"X exact {exact.throughput:8.4f}  des {des.throughput:8.4f} "
          f"+- {des.ci_half_width['throughput']:.4f}")
    for pool, u in exact.utilization.items():
        print(f"      U[{pool:<5}] exact {u:.4f}  des {des.utilization[pool]:.4f}")


def erlang_c(c, a):
    top = a ** c / math.factorial(c) / (1 - a / c)
    return top / (sum(a ** i / math.factorial(i) for i in range(c)) + top)


print("\nopen fixtures")
rep = run_sim(validate_scenario(shipped_raw("mm1_open")), seed=1, stop=stop)
print(f"  M/M/1  rho=0.5: U {rep.utilization['TCF']:.4f} (0.5), T {rep.mean_response:.4f} (1.0)")
rep = run_sim(validate_scenario(shipped_raw("mmc_open")), seed=1, stop=stop)
t = erlang_c(3, 1.5) / (3 - 1.5) + 1
print(f"  M/M/3  rho=0.5: U {rep.utilization['TCF']:.4f} (0.5), T {rep.mean_response:.4f} ({t:.4f})")
