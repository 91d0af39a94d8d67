"""
A two-dimensional attack you can follow by hand
===============================================

A linear three-class model on the plane, one correctly classified point, and
an l2 disk of radius 0.4 around it. We run PGD with the cross-entropy, with
the CW margin, and with cross-entropy for 25 steps followed by CW for 25.
"""

import numpy as np

from multipgd.attack import TOY, toy_outcomes
from multipgd.losses import cw_loss
from multipgd.models import forward, predict

model, x = TOY.model, np.array(TOY.x)
print("logits at the clean point:", forward(model, x))
print("clean prediction:", predict(model, x))

runs = toy_outcomes()
for name, out in runs.items():
    pts = out.iterates[0]
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    final = pts[-1]
    print(f"\n{name}")
    print(f"  final point      {final.round(4)}  (distance {np.linalg.norm(final - x):.4f})")
    print(f"  final CW margin  {cw_loss(forward(model, final), TOY.y):+.4f}")
    print(f"  last step sizes  {steps[-3:]}")
    print(f"  success          {out.success}")

# CW moves once and then sits still: its gradient points straight out of the
# disk, so every step is undone by the projection.
cw_steps = np.linalg.norm(np.diff(runs["CW"].iterates[0], axis=0), axis=1)
print("\nCW iterations that still move:", np.flatnonzero(cw_steps > 1e-9).tolist())

# Is there any misclassified point in the disk at all? A dense sweep answers it.
r = np.sqrt(np.linspace(0, 1, 300)) * TOY.threat.eps
th = np.linspace(0, 2 * np.pi, 1500, endpoint=False)
P = x + np.stack([np.outer(r, np.cos(th)), np.outer(r, np.sin(th))], -1).reshape(-1, 2)
Z = forward(model, P)
margin = Z[:, 1:].max(axis=1) - Z[:, 0]
print(f"best CW margin anywhere in the disk: {margin.max():+.4f} at {P[margin.argmax()].round(4)}")
