"""Dataset-level evaluation: robust accuracy tables, loss-order and combiner
ablations, and successive-iterate distance traces."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attack import (AttackConfig, AttackOutcome, Alternate, Convex, EnsembleOr,
                     ThreatModel, attack_batch)
from .losses import LossSchedule, SurrogateKind
from .models import Classifier, Dataset, LabeledExample
from . import schedules

# examples per attack_batch call; fixed so results do not depend on --jobs
CHUNK = 256

REPORT_HEADER = ["attack_label", "robust_acc", "asr", "mean_iters_to_success", "wall_ms"]
EXAMPLE_HEADER = ["example_id", "attack_label", "success", "best_restart", "best_t",
                  "perturbation_norm"]
TRACE_HEADER = ["attack_label", "k", "mean_l2"]


class FeasibilityError(RuntimeError):
    """An adversary returned by an attack lies outside its threat set."""


@dataclass
class ReportRow:
    label: str
    robust_accuracy: float
    asr: float
    mean_iters_to_success: float
    wall_ms: float
    n: int


@dataclass
class ExampleRecord:
    example_id: int
    label: str
    success: bool
    best_restart: int
    best_t: int
    perturbation_norm: float


@dataclass
class EvaluationReport:
    model_name: str
    dataset_name: str
    rows: list[ReportRow]
    examples: list[ExampleRecord] = field(default_factory=list)

    def row(self, label: str) -> ReportRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def __getitem__(self, label: str) -> ReportRow:
        return self.row(label)

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.rows]

    def success_set(self, label: str) -> frozenset[int]:
        return frozenset(e.example_id for e in self.examples if e.label == label and e.success)

    def write_csv(self, path, timings: bool = False) -> None:
        """Summary table. ``wall_ms`` is left empty unless ``timings`` is set,
        so that reruns produce identical bytes."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                w.writerow([r.label, repr(r.robust_accuracy), repr(r.asr),
                            repr(r.mean_iters_to_success),
                            repr(r.wall_ms) if timings else ""])

    def write_examples_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EXAMPLE_HEADER)
            for e in self.examples:
                w.writerow([e.example_id, e.label, int(e.success), e.best_restart,
                            e.best_t, repr(e.perturbation_norm)])

    def to_table(self) -> str:
        """Human-readable table, percentages with two decimals."""
        width = max([len("attack")] + [len(r.label) for r in self.rows])
        lines = [f"model: {self.model_name}   dataset: {self.dataset_name}",
                 f"{'attack':<{width}}  rob.acc(%)  ASR(%)  iters"]
        for r in self.rows:
            iters = "-" if math.isnan(r.mean_iters_to_success) else f"{r.mean_iters_to_success:.1f}"
            lines.append(f"{r.label:<{width}}  {100 * r.robust_accuracy:10.2f}  "
                         f"{100 * r.asr:6.2f}  {iters:>5}")
        return "\n".join(lines)


@dataclass
class DistanceTrace:
    """Batch mean of ``||x^(k+1) - x^(k)||_2`` for ``k = 1 .. T-1``."""

    label: str
    k: np.ndarray
    mean_l2: np.ndarray

    def __len__(self):
        return len(self.mean_l2)

    def at(self, k: int) -> float:
        return float(self.mean_l2[k - 1])


def write_traces_csv(traces, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for tr in traces:
            for k, v in zip(tr.k, tr.mean_l2):
                w.writerow([tr.label, int(k), repr(float(v))])


def _check_compatible(model: Classifier, dataset: Dataset) -> None:
    if dataset.dim != model.input_dim:
        raise ValueError(f"dataset has dimension {dataset.dim}, model expects {model.input_dim}")
    if len(dataset) and int(dataset.y.max()) >= model.num_classes:
        raise ValueError(f"dataset labels exceed the model's {model.num_classes} classes")


def _named(configs) -> list[tuple[str, AttackConfig]]:
    if isinstance(configs, dict):
        items = list(configs.items())
    else:
        items = [c if isinstance(c, tuple) else (c.label, c) for c in configs]
    labels = [l for l, _ in items]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate attack labels: {labels}")
    return items


def _attack_all(model, X, Y, config, jobs) -> list[AttackOutcome]:
    starts = range(0, len(X), CHUNK)

    def work(s):
        idx = np.arange(s, min(s + CHUNK, len(X)))
        return attack_batch(model, X[idx], Y[idx], config, seeds=idx)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return [o for part in parts for o in part]


def evaluate(model: Classifier, dataset: Dataset, configs, jobs: int = 1) -> EvaluationReport:
    """Run every attack configuration on every example.

    ``configs`` is a dict ``label -> AttackConfig``, a list of configs (labelled
    by ``config.label``) or a list of ``(label, config)`` pairs. Clean
    misclassifications count as successes. Adversaries are re-checked against
    the threat set here rather than trusted.
    """
    _check_compatible(model, dataset)
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    rows, records = [], []
    for label, config in _named(configs):
        t0 = time.perf_counter()
        outcomes = _attack_all(model, dataset.X, dataset.y, config, jobs)
        wall_ms = 1000.0 * (time.perf_counter() - t0)
        threat = config.threat
        adv = np.array([o.adversary for o in outcomes])
        feasible = threat.contains(adv, dataset.X)
        if not feasible.all():
            bad = np.flatnonzero(~feasible)[:5].tolist()
            raise FeasibilityError(f"{label}: adversaries outside the threat set for examples {bad}")
        norms = threat.norm(adv - dataset.X)
        wins = [o.first_success for o in outcomes if o.success]
        successes = sum(o.success for o in outcomes)
        asr = successes / n
        rows.append(ReportRow(
            label=label, robust_accuracy=1.0 - asr, asr=asr,
            mean_iters_to_success=float(np.mean(wins)) if wins else float("nan"),
            wall_ms=wall_ms, n=n,
        ))
        for i, o in enumerate(outcomes):
            r, t = o.best_iterate_index
            records.append(ExampleRecord(i, label, bool(o.success), r, t, float(norms[i])))
    rows.sort(key=lambda r: r.label)
    records.sort(key=lambda e: (e.label, e.example_id))
    return EvaluationReport(model.name, dataset.name, rows, records)


def distance_trace(model: Classifier, batch, config: AttackConfig, label: str | None = None,
                   jobs: int = 1) -> DistanceTrace:
    """Mean successive-iterate distance over ``batch`` (first restart only)."""
    if isinstance(batch, Dataset):
        X, Y = batch.X, batch.y
    else:
        batch = list(batch)
        if not batch:
            raise ValueError("empty batch")
        X = np.array([np.asarray(e.x, dtype=np.float64) for e in batch])
        Y = np.array([e.y for e in batch])
    if len(X) == 0:
        raise ValueError("empty batch")
    if X.shape[1] != model.input_dim:
        raise ValueError(f"inputs have dimension {X.shape[1]}, model expects {model.input_dim}")
    outcomes = _attack_all(model, X, Y, config, jobs)
    d = np.mean([o.trace.distance[0, 1:] for o in outcomes], axis=0)
    return DistanceTrace(label or config.label, np.arange(1, config.T), d)


# ---------------------------------------------------------------------------
# standard experiment grids

STANDARD_SCHEDULES = ("ce", "cw", "dlr", "ce,cw", "ce,dlr", "cw,dlr", "ce,cw,dlr")


def named_config(losses, threat: ThreatModel, T: int = 100, schedule: str = "fixed-quarter",
                 **kw) -> AttackConfig:
    """Clean-start config with a named step schedule."""
    return AttackConfig(T=T, threat=threat, losses=losses,
                        steps=schedules.make_paper_schedule(schedule, threat.eps, T), **kw)


def standard_configs(threat: ThreatModel, T: int = 100, schedule: str = "fixed-quarter",
                     losses=STANDARD_SCHEDULES) -> dict[str, AttackConfig]:
    """Single losses and their 2- and 3-stage alternations."""
    out = {}
    for text in losses:
        cfg = named_config(LossSchedule.parse(text), threat, T, schedule)
        out[cfg.label] = cfg
    return out


def ordering_ablation(model: Classifier, dataset: Dataset, pairs, base: AttackConfig,
                      jobs: int = 1) -> EvaluationReport:
    """Both orders of each surrogate pair, plus the single-loss rows."""
    configs = {}
    for a, b in pairs:
        a, b = SurrogateKind.parse(a), SurrogateKind.parse(b)
        for stages in ((a,), (b,), (a, b), (b, a)):
            cfg = replace(base, losses=LossSchedule(stages), combiner=Alternate())
            configs[cfg.label] = cfg
    return evaluate(model, dataset, configs, jobs)


def combiner_ablation(model: Classifier, dataset: Dataset, gammas, base: AttackConfig,
                      pair=("ce", "cw"), jobs: int = 1) -> EvaluationReport:
    """Single losses at full and half budget, ensemble-OR of the halves,
    convex combinations at each gamma, and the alternation."""
    a, b = (SurrogateKind.parse(p) for p in pair)
    T = base.T
    half = T // 2
    configs = {}
    for kind in (a, b):
        for budget in (T, half):
            cfg = replace(base, T=budget, losses=LossSchedule((kind,)), combiner=Alternate())
            configs[f"{kind.label}^{budget}"] = cfg
    both = LossSchedule((a, b))
    ens = replace(base, losses=both, combiner=EnsembleOr())
    configs[ens.label] = ens
    for g in gammas:
        cfg = replace(base, losses=both, combiner=Convex(float(g)))
        configs[cfg.label] = cfg
    alt = replace(base, losses=both, combiner=Alternate())
    configs[alt.label] = alt
    return evaluate(model, dataset, configs, jobs)
