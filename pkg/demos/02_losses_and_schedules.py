"""
Surrogate losses and step-size schedules
========================================
"""

import numpy as np

from multipgd.losses import (ConvexCombo, SurrogateKind, convex_loss_and_gradient,
                             loss_value_and_logit_gradient, stage_bounds)
from multipgd.schedules import make_paper_schedule, step_sizes

z = np.array([0.105, -0.442, -0.4875])
for kind in SurrogateKind:
    value, grad = loss_value_and_logit_gradient(kind, z, 0)
    print(f"{kind.label:>3}: value {value:+.6f}  logit gradient {grad.round(4)}")

# DLR only looks at differences of logits relative to their spread
for c in (1e-3, 1.0, 1e3):
    print(f"DLR of {c:g} * z: {loss_value_and_logit_gradient('dlr', c * z, 0)[0]:+.12f}")

value, _ = convex_loss_and_gradient(ConvexCombo(0.25, "ce", "cw"), z, 0)
print(f"0.25 * CE + 0.75 * CW = {value:+.6f}")

# A 100-step run split into three surrogate stages
print("\nstages for T=100, K=3:", stage_bounds(100, 3))

eps = 8 / 255
for name in ("fixed-quarter", "gama", "md2", "md3"):
    eta = np.array(step_sizes(make_paper_schedule(name, eps, 100), 100)) / eps
    picks = {t: round(float(eta[t]), 4) for t in (0, 33, 34, 49, 50, 60, 66, 67, 85, 99)}
    print(f"{name:>13} (in units of eps): {picks}")
