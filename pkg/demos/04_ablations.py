"""
Does the order of the surrogates matter, and how do other combiners compare?
============================================================================
"""

from multipgd import benchmark
from multipgd.evaluation import combiner_ablation, ordering_ablation, named_config

b = benchmark.load()
base = named_config("ce", b.threat, T=100)

print("both orders of each pair")
print(ordering_ablation(b.robust, b.test, [("ce", "cw"), ("ce", "dlr"), ("cw", "dlr")], base)
      .to_table())

# CE^50|CW^50 runs each loss for half the budget from the clean point and
# counts a success if either run finds one.
print("\nsingle losses, ensemble, convex mixtures and alternation")
report = combiner_ablation(b.robust, b.test, [0.25, 0.5, 0.75], base)
print(report.to_table())
union = report.success_set("CE^50") | report.success_set("CW^50")
print("ensemble successes equal the union of its halves:",
      report.success_set("CE^50|CW^50") == union)
