"""NGN versus evolved NGN under equal processor budgets.

Both variants get the same number of processors, split evenly over their
components.  Each configuration is swept over a population grid around
its asymptotic knee; the saturation point is where the marginal
throughput per added user collapses.  Productivity weighs throughput by
response time and divides by the processor count; psi compares the
doubled budget with the basic one.

Run:  python3 demos/scalability_study.py [budget]   (about 40 s for budget 8)
"""

import sys

from engn.model import default_config
from engn.scaleval import compare_variants, comparison_rows, curves_csv

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 8
report = compare_variants(default_config("ngn", budget), default_config("engn", budget))

print(f"{'variant':<6} {'budget':>6} {'split':<28} {'kSat':>5} {'kSat(U)':>7} "
      f"{'lambda':>8} {'T (s)':>7} {'F':>7}  bottleneck")
for v in ("ngn", "engn"):
    for lab in ("basic", "scaled"):
        e = report[v][lab]
        p = e["point"]
        split = ",".join(f"{k}{n}" for k, n in e["processors"].items())
        print(f"{v:<6} {e['budget']:>6} {split:<28} {e['kSat']:>5} {str(e['kSatUtil']):>7} "
              f"{p.throughput:8.1f} {p.mean_response:7.3f} {e['F']:7.3f}  {e['bottleneck']}")
    print(f"{'':6} psi = {report[v]['psi']:.3f} +- {report[v]['psiCi']:.3f}")

print(f"\neNGN saturates later: {report['kSatOrdering']}")
print(f"psi_eNGN >= psi_NGN:   {report['psiOrdering']}")
print(f"saturation aligned:    {report['aligned']}")

with open("scalability_curves.csv", "w") as fh:
    fh.write(curves_csv(comparison_rows(report)))
print("curves written to scalability_curves.csv")
