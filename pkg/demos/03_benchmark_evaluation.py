"""
Robust accuracy of single losses and their alternations
=======================================================

Two MLPs are trained on three Gaussian blobs in the unit square, one plainly
and one on PGD adversaries. Every surrogate and every ordered alternation of
them is then run for 100 steps inside an l-infinity ball.
"""

from multipgd import benchmark
from multipgd.evaluation import evaluate, standard_configs
from multipgd.models import accuracy

b = benchmark.load()
print(f"eps = {b.threat.eps}, {len(b.train)} training and {len(b.test)} test points")
for name, model in (("plain", b.plain), ("adversarial", b.robust)):
    print(f"{name} model clean test accuracy: {100 * accuracy(model, b.test):.2f}%")

configs = standard_configs(b.threat, T=100, schedule="fixed-quarter")
report = evaluate(b.robust, b.test, configs)
print()
print(report.to_table())

# The same table for the plainly trained model
print()
print(evaluate(b.plain, b.test, configs).to_table())
