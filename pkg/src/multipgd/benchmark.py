"""Seeded desk-scale benchmark: a 2-D, 3-class dataset in the unit square
and the plain / adversarially trained MLP victims used by the experiments."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .attack import ThreatModel
from .models import AdversarialTraining, Classifier, Dataset, TrainConfig, train

SEED = 0
CENTERS = np.array([[0.3, 0.3], [0.7, 0.3], [0.5, 0.65]])
SPREAD = 0.1
EPS = 0.12
HIDDEN = (32, 32)
EPOCHS = 400
LR = 0.5
INNER_STEPS = 10


def make_blobs(n: int, seed: int, name="blobs3") -> Dataset:
    """``n`` points split evenly over three Gaussian blobs, clipped to [0,1]^2."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % len(CENTERS)
    X = CENTERS[y] + SPREAD * rng.standard_normal((n, 2))
    return Dataset(np.clip(X, 0.0, 1.0), y, len(CENTERS), name)


@dataclass(frozen=True)
class Benchmark:
    train: Dataset
    test: Dataset
    plain: Classifier
    robust: Classifier
    threat: ThreatModel


@lru_cache(maxsize=4)
def load(seed: int = SEED, eps: float = EPS, n_train: int = 1500, n_test: int = 1200) -> Benchmark:
    """Build (and memoise) the benchmark; ``seed`` drives weights, ``seed+1``
    and ``seed+2`` the train and test draws."""
    train_set = make_blobs(n_train, seed + 1, "blobs3-train")
    test_set = make_blobs(n_test, seed + 2, "blobs3-test")
    threat = ThreatModel("inf", eps, box=True)
    plain = train(train_set, TrainConfig(HIDDEN, EPOCHS, LR, seed), name="plain-mlp")
    robust = train(
        train_set,
        TrainConfig(HIDDEN, EPOCHS, LR, seed, AdversarialTraining(threat, INNER_STEPS)),
        name="adv-mlp",
    )
    return Benchmark(train_set, test_set, plain, robust, threat)


def bundled_path(split: str = "test"):
    """Path of the shipped CSV copy of the default benchmark split."""
    from importlib.resources import files

    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    return files("multipgd") / "data" / f"blobs3_{split}.csv"
