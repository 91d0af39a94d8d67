"""Projected gradient ascent with multi-stage surrogate alternation.

The engine works on a batch of rows (one row per example and restart) so
that evaluating a whole dataset costs a handful of matrix products per
iteration. ``run_pgd`` is the single-example entry point built on the same
loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import schedules
from .losses import ConvexCombo, LossSchedule, SurrogateKind, stage_bounds, stage_of
from .models import Classifier, LabeledExample, _backward, _forward_cache, predict
from .losses import batch_value_and_gradient

# p=2 steps with a gradient norm at or below this are skipped
ZERO_GRAD_NORM = 1e-20


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ThreatModel:
    """``{x' : ||x' - x||_p <= eps}``, optionally intersected with ``[0,1]^D``."""

    p: str = "inf"
    eps: float = 8 / 255
    box: bool = True

    def __post_init__(self):
        p = str(self.p).strip().lower()
        aliases = {"inf": "inf", "linf": "inf", "infinity": "inf",
                   "2": "2", "l2": "2", "two": "2", "2.0": "2"}
        if p not in aliases:
            raise ValueError(f"unsupported norm {self.p!r}; use inf or 2")
        object.__setattr__(self, "p", aliases[p])
        if not (self.eps >= 0 and math.isfinite(self.eps)):
            raise ValueError(f"eps must be a finite non-negative number, got {self.eps}")

    def norm(self, delta) -> np.ndarray:
        delta = np.asarray(delta, dtype=np.float64)
        if self.p == "inf":
            return np.abs(delta).max(axis=-1)
        return np.sqrt((delta * delta).sum(axis=-1))

    def contains(self, x, origin, tol=1e-9) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        ok = self.norm(x - origin) <= self.eps + tol
        if self.box:
            ok &= np.all((x >= -tol) & (x <= 1 + tol), axis=-1)
        return ok


@dataclass(frozen=True)
class Clean:
    """Start from the clean input."""


@dataclass(frozen=True)
class RandomSign:
    """Start from ``x + eps * sign(u)``, ``u ~ U(-1, 1)``."""

    seed: int = 0


@dataclass(frozen=True)
class Alternate:
    """Switch surrogate at equal-length stage boundaries."""


@dataclass(frozen=True)
class EnsembleOr:
    """One independent run per surrogate from the clean point; success is OR."""


@dataclass(frozen=True)
class Convex:
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


class ConfigError(ValueError):
    """An AttackConfig violates one of its invariants."""


@dataclass(frozen=True)
class AttackConfig:
    T: int
    threat: ThreatModel
    losses: LossSchedule
    steps: schedules.StepSchedule
    R: int = 1
    init: Clean | RandomSign = Clean()
    combiner: Alternate | EnsembleOr | Convex = Alternate()

    def __post_init__(self):
        if isinstance(self.losses, (str, list, tuple)):
            losses = (LossSchedule.parse(self.losses) if isinstance(self.losses, str)
                      else LossSchedule(tuple(self.losses)))
            object.__setattr__(self, "losses", losses)
        if not isinstance(self.T, int) or self.T < 1:
            raise ConfigError(f"T must be a positive integer, got {self.T!r}")
        if not isinstance(self.R, int) or self.R < 1:
            raise ConfigError(f"R must be a positive integer, got {self.R!r}")
        if self.R > 1 and not isinstance(self.init, RandomSign):
            raise ConfigError("R > 1 needs random-sign initialisation; clean restarts are identical")
        K = self.losses.K
        if K > self.T:
            raise ConfigError(f"{K} stages do not fit in T={self.T} iterations")
        if isinstance(self.combiner, Convex) and K != 2:
            raise ConfigError("the convex combiner takes exactly two surrogates")
        if isinstance(self.combiner, EnsembleOr) and K < 2:
            raise ConfigError("the ensemble combiner needs at least two surrogates")
        try:
            schedules.validate(self.steps, self.T)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    @property
    def label(self) -> str:
        names = [s.label for s in self.losses.stages]
        if isinstance(self.combiner, Convex):
            g = self.combiner.gamma
            return f"{names[0]}+{names[1]}(gamma={g:g})"
        if isinstance(self.combiner, EnsembleOr):
            return "|".join(f"{n}^{b - a}" for n, (a, b) in
                            zip(names, stage_bounds(self.T, self.losses.K)))
        return "&".join(names)

    def plan(self):
        """Per-iteration ``(stage, objective, step size)`` for the whole run."""
        K = self.losses.K
        out = []
        for t in range(self.T):
            eta = schedules.step_size(self.steps, t, self.T)
            if isinstance(self.combiner, Convex):
                a, b = self.losses.stages
                out.append((0, ConvexCombo(self.combiner.gamma, a, b), eta))
            else:
                k = stage_of(t, self.T, K)
                out.append((k, self.losses.stages[k], eta))
        return out


def _objective_label(obj) -> str:
    if isinstance(obj, ConvexCombo):
        return f"{obj.gamma:g}*{obj.first.label}+{1 - obj.gamma:g}*{obj.second.label}"
    return SurrogateKind.parse(obj).label


# ---------------------------------------------------------------------------
# outcome


@dataclass
class Trace:
    """Per-iteration records, arrays of shape ``(runs, iterations)``.

    Record ``t`` describes the step from iterate ``t`` to iterate ``t+1``:
    the objective value at iterate ``t``, the step size, the distance
    ``||x^(t+1) - x^(t)||_2`` and whether iterate ``t+1`` is misclassified.
    """

    stage: np.ndarray
    step: np.ndarray
    kind: tuple[str, ...]
    loss: np.ndarray
    distance: np.ndarray
    misclassified: np.ndarray
    aborted: np.ndarray

    def __len__(self):
        return int(self.loss.size)

    def records(self):
        R, T = self.loss.shape
        for r in range(R):
            for t in range(T):
                yield {
                    "restart": r, "t": t, "stage": int(self.stage[r, t]),
                    "step": float(self.step[r, t]), "kind": self.kind[t],
                    "loss": float(self.loss[r, t]),
                    "distance": float(self.distance[r, t]),
                    "misclassified": bool(self.misclassified[r, t]),
                    "aborted": bool(self.aborted[r, t]),
                }


@dataclass
class AttackOutcome:
    success: bool
    adversary: np.ndarray
    best_iterate_index: tuple[int, int]  # (run, iterate); iterate 0 is the start point
    trace: Trace
    first_success: int | None = None  # iterations spent before the first misclassified iterate
    iterates: np.ndarray | None = None  # (runs, T+1, D) when requested
    errors: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# projection, initialisation, single step


def _project_rows(C, O, threat: ThreatModel):
    eps = threat.eps
    if threat.p == "inf":
        # clamping against precomputed bounds keeps the map exactly idempotent
        W = np.minimum(np.maximum(C, O - eps), O + eps)
    else:
        D = C - O
        n = np.sqrt((D * D).sum(axis=1))
        out = n > eps
        W = C.copy()
        if out.any():
            idx = np.flatnonzero(out)
            Oi = O[idx]
            Wi = Oi + D[idx] * (eps / n[idx])[:, None]
            # rounding can leave the rescaled point just outside the ball;
            # step its coordinates one ulp toward the origin until it is inside
            while True:
                Di = Wi - Oi
                over = np.sqrt((Di * Di).sum(axis=1)) > eps
                if not over.any():
                    break
                Wi[over] = np.nextafter(Wi[over], Oi[over])
            W[idx] = Wi
    if threat.box:
        W = np.clip(W, 0.0, 1.0)
    return W


def project(candidate, origin, threat: ThreatModel) -> np.ndarray:
    """Nearest point of the threat set around ``origin``.

    The norm-ball projection is applied first, then the ``[0,1]`` clip.
    When ``origin`` lies in the box the clip cannot leave the ball, so the
    result is feasible and the map is idempotent bit for bit.
    """
    C = np.asarray(candidate, dtype=np.float64)
    O = np.asarray(origin, dtype=np.float64)
    if C.shape != O.shape:
        raise ValueError(f"shape mismatch: {C.shape} vs {O.shape}")
    single = C.ndim == 1
    W = _project_rows(np.atleast_2d(C), np.atleast_2d(O), threat)
    return W[0] if single else W


def init_point(x0, strategy, threat: ThreatModel, rng: np.random.Generator | None = None):
    x0 = np.asarray(x0, dtype=np.float64)
    if isinstance(strategy, Clean):
        return x0.copy()
    if isinstance(strategy, RandomSign):
        if rng is None:
            rng = np.random.default_rng(strategy.seed)
        u = rng.uniform(-1.0, 1.0, size=x0.shape)
        return project(x0 + threat.eps * np.sign(u), x0, threat)
    raise TypeError(f"unknown init strategy {strategy!r}")


def _direction(G, p):
    if p == "inf":
        return np.sign(G)
    n = np.sqrt((G * G).sum(axis=1))
    safe = np.where(n > ZERO_GRAD_NORM, n, 1.0)
    return np.where((n > ZERO_GRAD_NORM)[:, None], G / safe[:, None], 0.0)


def pgd_step(model: Classifier, x_t, x0, y, kind, eta: float, threat: ThreatModel):
    """One ascent step on ``kind`` followed by projection around ``x0``."""
    from .models import input_gradient

    if not eta >= 0:
        raise ValueError("step size must be non-negative")
    x_t = np.asarray(x_t, dtype=np.float64)
    g = input_gradient(model, x_t, y, kind)
    d = _direction(g[None, :], threat.p)[0]
    return project(x_t + eta * d, x0, threat)


# ---------------------------------------------------------------------------
# batched engine


def _cw_margin(Z, Y):
    rows = np.arange(Z.shape[0])
    other = Z.copy()
    other[rows, Y] = -np.inf
    return other.max(axis=1) - Z[rows, Y]


def _run_rows(model, O, Y, X, plan, threat, record_iterates=False):
    """Run ``len(plan)`` PGD iterations on every row.

    ``O``: origins, ``Y``: labels, ``X``: starting points, all row-aligned.
    Returns a dict of per-row arrays; see ``_collect``.
    """
    M, D = X.shape
    T = len(plan)
    X = X.copy()
    rows = np.arange(M)
    loss = np.full((M, T), np.nan)
    dist = np.zeros((M, T))
    mis = np.zeros((M, T + 1), dtype=bool)
    aborted_at = np.full(M, -1)
    best_cw = np.full(M, -np.inf)
    best_t = np.full(M, -1)
    best_x = X.copy()
    iterates = np.empty((M, T + 1, D)) if record_iterates else None
    active = np.ones(M, dtype=bool)

    for t in range(T + 1):
        pre, acts = _forward_cache(model, X)
        Z = acts[-1]
        is_mis = (np.argmax(Z, axis=1) != Y) & active
        mis[:, t] = is_mis
        cw = _cw_margin(Z, Y)
        better = is_mis & ((best_t < 0) | (cw > best_cw))
        best_cw[better] = cw[better]
        best_t[better] = t
        best_x[better] = X[better]
        if record_iterates:
            iterates[:, t] = X
        if t == T:
            break
        _, obj, eta = plan[t]
        values, dZ, bad = batch_value_and_gradient(obj, Z, Y)
        newly = bad & active
        if newly.any():
            aborted_at[newly] = t
            active &= ~newly
        loss[active, t] = values[active]
        G, _ = _backward(model, pre, acts, dZ)
        step = _direction(G, threat.p)
        Xn = _project_rows(X + eta * step, O, threat)
        Xn[~active] = X[~active]
        diff = Xn - X
        dist[:, t] = np.sqrt((diff * diff).sum(axis=1))
        X = Xn

    final_t = np.where(aborted_at >= 0, aborted_at, T)
    return {
        "final": X, "loss": loss, "dist": dist, "mis": mis,
        "aborted_at": aborted_at, "final_t": final_t,
        "best_cw": best_cw, "best_t": best_t, "best_x": best_x,
        "iterates": iterates,
    }


def _starts(X0, init, threat, rngs, n_runs):
    """Starting points, ordered example-major then run."""
    N, D = X0.shape
    out = np.empty((N * n_runs, D))
    for i in range(N):
        for r in range(n_runs):
            out[i * n_runs + r] = init_point(X0[i], init, threat, rngs[i] if rngs else None)
    return out


def _rngs_for(config, n, seeds):
    if not isinstance(config.init, RandomSign):
        return None
    if seeds is None:
        seeds = range(n)
    return [s if isinstance(s, np.random.Generator)
            else np.random.default_rng([config.init.seed, int(s)]) for s in seeds]


def attack_batch(model: Classifier, X0, Y, config: AttackConfig, seeds=None,
                 record_iterates=False) -> list[AttackOutcome]:
    """Attack every row of ``X0`` with ``config``.

    ``seeds`` gives one integer (or Generator) per example for random-sign
    starts; integer ``s`` becomes ``default_rng([config.init.seed, s])``.
    Defaults to the example position.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    Y = np.atleast_1d(np.asarray(Y, dtype=np.int64))
    if X0.shape[1] != model.input_dim:
        raise ValueError(f"input has dimension {X0.shape[1]}, model expects {model.input_dim}")
    if Y.shape != (X0.shape[0],):
        raise ValueError("labels do not match inputs")
    if np.any(Y < 0) or np.any(Y >= model.num_classes):
        raise ValueError(f"label out of range [0, {model.num_classes})")
    if config.threat.box and (np.any(X0 < 0) or np.any(X0 > 1)):
        raise ValueError("inputs must lie in [0, 1] when the box constraint is on")
    if SurrogateKind.DLR in config.losses.stages and model.num_classes < 3:
        raise ConfigError("DLR needs at least 3 classes")
    N = X0.shape[0]
    rngs = _rngs_for(config, N, seeds)
    R, T = config.R, config.T
    full_plan = config.plan()

    if isinstance(config.combiner, EnsembleOr):
        segments = stage_bounds(T, config.losses.K)
        # every sub-run starts from its own init around the clean point
        starts = [_starts(X0, config.init, config.threat, rngs, R) for _ in segments]
        subplans = [[(k, config.losses.stages[k], full_plan[t][2]) for t in range(a, b)]
                    for k, (a, b) in enumerate(segments)]
    else:
        starts = [_starts(X0, config.init, config.threat, rngs, R)]
        subplans = [full_plan]
        segments = [(0, T)]

    O = np.repeat(X0, R, axis=0)
    Yr = np.repeat(Y, R)
    results = [_run_rows(model, O, Yr, S, p, config.threat, record_iterates)
               for S, p in zip(starts, subplans)]

    outcomes = []
    kinds = tuple(_objective_label(obj) for _, obj, _ in full_plan)
    stage_arr = np.array([k for k, _, _ in full_plan])
    step_arr = np.array([eta for _, _, eta in full_plan])
    for i in range(N):
        sl = slice(i * R, (i + 1) * R)
        loss = np.concatenate([res["loss"][sl] for res in results], axis=1)
        dist = np.concatenate([res["dist"][sl] for res in results], axis=1)
        mis = np.concatenate([res["mis"][sl][:, 1:] for res in results], axis=1)
        aborted = np.zeros((R, T), dtype=bool)
        errors = []
        for (a, b), res in zip(segments, results):
            for r, at in enumerate(res["aborted_at"][sl]):
                if at >= 0:
                    aborted[r, a + at:b] = True
                    errors.append(f"run {r}: loss undefined at iteration {a + at}; run aborted")
        trace = Trace(
            stage=np.broadcast_to(stage_arr, (R, T)).copy(),
            step=np.broadcast_to(step_arr, (R, T)).copy(),
            kind=kinds, loss=loss, distance=dist, misclassified=mis, aborted=aborted,
        )

        # candidate runs in order: sub-run k, restart r -> run id k*R + r
        best = None
        first = None
        spent = 0
        last = None
        for k, ((a, b), res) in enumerate(zip(segments, results)):
            length = b - a
            for r in range(R):
                row = i * R + r
                run_id = k * R + r
                hits = np.flatnonzero(res["mis"][row])
                if hits.size and first is None:
                    first = spent + int(hits[0])
                spent += length
                if res["best_t"][row] >= 0:
                    cw = res["best_cw"][row]
                    if best is None or cw > best[0]:
                        best = (cw, run_id, int(res["best_t"][row]), res["best_x"][row])
                last = (run_id, int(res["final_t"][row]), res["final"][row])
        if best is not None:
            _, run_id, t_best, x_best = best
        else:
            run_id, t_best, x_best = last
        adversary = x_best.copy()
        success = predict(model, adversary) != Y[i]

        iterates = None
        if record_iterates:
            # ensemble sub-runs have different lengths; only single runs keep iterates
            if len(results) == 1:
                iterates = results[0]["iterates"][sl].copy()
        outcomes.append(AttackOutcome(
            success=bool(success), adversary=adversary,
            best_iterate_index=(run_id, t_best), trace=trace,
            first_success=first, iterates=iterates, errors=errors,
        ))
    return outcomes


def run_pgd(model: Classifier, example: LabeledExample, config: AttackConfig,
            rng: np.random.Generator | None = None, record_iterates=False) -> AttackOutcome:
    """Attack one example.

    Runs ``config.R`` restarts of ``config.T`` iterations, switching the
    surrogate at each stage boundary and keeping the best misclassified
    iterate (largest CW margin) seen anywhere. Without any misclassified
    iterate the final point of the last restart is returned.
    """
    seeds = None
    if isinstance(config.init, RandomSign):
        seeds = [rng if rng is not None else np.random.default_rng(config.init.seed)]
    return attack_batch(model, np.asarray(example.x)[None, :], [example.y], config,
                        seeds=seeds, record_iterates=record_iterates)[0]


def ensemble_or_attack(model: Classifier, example: LabeledExample, base: AttackConfig,
                       rng: np.random.Generator | None = None) -> AttackOutcome:
    """Independent single-surrogate runs over the per-stage budgets of
    ``base``, each from the clean point; succeeds if any run does."""
    if base.losses.K < 2:
        raise ConfigError("ensemble needs at least two surrogates")
    return run_pgd(model, example, replace(base, combiner=EnsembleOr()), rng)


def adversarial_examples(model: Classifier, X, Y, threat: ThreatModel, steps: int,
                         eta: float, rng: np.random.Generator) -> np.ndarray:
    """Last iterate of PGD-CE from random-sign starts (training inner loop)."""
    X = np.asarray(X, dtype=np.float64)
    starts = _project_rows(X + threat.eps * np.sign(rng.uniform(-1, 1, size=X.shape)), X, threat)
    plan = [(0, SurrogateKind.CE, eta)] * steps
    return _run_rows(model, X, np.asarray(Y), starts, plan, threat)["final"]


# ---------------------------------------------------------------------------
# toy problem


@dataclass(frozen=True)
class ToyProblem:
    """Two-dimensional, three-class linear problem on which CW alone jams."""

    W: tuple = ((0.3, -0.3), (1.0, -0.01), (-0.25, 0.75))
    x: tuple = (-0.45, -0.8)
    y: int = 0
    threat: ThreatModel = ThreatModel(p="2", eps=0.4, box=False)
    T: int = 50

    @property
    def eta(self) -> float:
        return 2 * self.threat.eps

    @property
    def model(self) -> Classifier:
        return Classifier.linear(np.array(self.W), name="toy")

    @property
    def example(self) -> LabeledExample:
        return LabeledExample(np.array(self.x), self.y)

    def config(self, losses: str) -> AttackConfig:
        return AttackConfig(T=self.T, threat=self.threat, losses=LossSchedule.parse(losses),
                            steps=schedules.Fixed(self.eta))


TOY = ToyProblem()
TOY_RUNS = ("CE", "CW", "CE&CW")


def toy_outcomes(problem: ToyProblem = TOY) -> dict[str, AttackOutcome]:
    return {name: run_pgd(problem.model, problem.example, problem.config(name),
                          record_iterates=True)
            for name in TOY_RUNS}


def toy_trajectories(problem: ToyProblem = TOY) -> dict[str, np.ndarray]:
    """Iterates ``x^(1) .. x^(T)`` of the CE, CW and CE&CW runs."""
    return {name: out.iterates[0, 1:] for name, out in toy_outcomes(problem).items()}


def toy_rows(name: str, iterates, problem: ToyProblem = TOY):
    """CSV rows ``run,t,x0,x1,pred,loss`` for one toy trajectory.

    ``loss`` is the objective that produced iterate ``t`` evaluated there.
    """
    from .models import loss_at

    model, cfg = problem.model, problem.config(name)
    plan = cfg.plan()
    for t, x in enumerate(iterates, start=1):
        obj = plan[t - 1][1]
        yield (name, t, float(x[0]), float(x[1]), predict(model, x),
               loss_at(model, x, problem.y, obj))
