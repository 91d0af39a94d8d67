"""
Train a victim, save it, reload it, attack one example
======================================================
"""

import tempfile
from pathlib import Path

import numpy as np

from multipgd.attack import AttackConfig, RandomSign, ThreatModel, run_pgd
from multipgd.benchmark import make_blobs
from multipgd.models import (AdversarialTraining, TrainConfig, accuracy, forward, load_model,
                             save_model, train)
from multipgd.schedules import make_paper_schedule

data = make_blobs(600, seed=11)
threat = ThreatModel("inf", 0.1)
model = train(data, TrainConfig(hidden=(16, 16), epochs=200, seed=1,
                                adversarial=AdversarialTraining(threat, steps=5)))
print(f"train accuracy {100 * accuracy(model, data):.1f}%")

path = Path(tempfile.mkdtemp()) / "victim.bin"
save_model(model, path)
again = load_model(path)
print("reloaded model gives identical logits:",
      np.array_equal(forward(again, data.X), forward(model, data.X)))

config = AttackConfig(T=60, threat=threat, losses="ce,cw,dlr",
                      steps=make_paper_schedule("md3", threat.eps, 60),
                      R=4, init=RandomSign(seed=0))
example = data[3]
out = run_pgd(again, example, config)
print(f"label {example.y}, success {out.success}, best iterate (restart, t) {out.best_iterate_index}")
print("perturbation", (out.adversary - example.x).round(4))
print("first trace records:")
for rec in list(out.trace.records())[:3]:
    print(" ", rec)
