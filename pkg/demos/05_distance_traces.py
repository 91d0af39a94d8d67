"""
How far does each PGD step move?
================================

Batch-mean distance between successive iterates on 100 test points. With a
fixed step, single-loss runs settle into a steady stride; changing the
surrogate kicks the iterates onto a new path, visible as a jump.
"""

import numpy as np

from multipgd import benchmark
from multipgd.evaluation import distance_trace, named_config

b = benchmark.load()
batch = b.test.subset(slice(0, 100))

traces = {losses: distance_trace(b.robust, batch, named_config(losses, b.threat))
          for losses in ("ce", "cw", "dlr", "ce,cw,dlr")}

print("k    " + "  ".join(f"{tr.label:>10}" for tr in traces.values()))
for k in (1, 10, 32, 33, 34, 35, 50, 65, 66, 67, 68, 90, 99):
    print(f"{k:<4} " + "  ".join(f"{tr.at(k):10.5f}" for tr in traces.values()))

alt = traces["ce,cw,dlr"]
for switch in (34, 67):
    print(f"switch at {switch}: {alt.at(switch - 1):.5f} -> {alt.at(switch):.5f}")

# A text sparkline of the alternating trace
scale = alt.mean_l2 / alt.mean_l2.max()
print("".join(" .:-=+*#%@"[int(v * 9)] for v in scale))
print("mean over the run:", {k: round(float(np.mean(t.mean_l2)), 5) for k, t in traces.items()})
