"""Step-size schedules: fixed, tenfold drops (GAMA-PGD style) and per-stage
cosine annealing (MD-attack style)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .losses import stage_start


@dataclass(frozen=True)
class Fixed:
    eta: float


@dataclass(frozen=True)
class TenfoldDrops:
    eta0: float
    drop_points: tuple[int, ...]


@dataclass(frozen=True)
class Cosine:
    """Cosine annealing restarted at ``2*eps`` at each boundary."""

    stage_boundaries: tuple[int, ...]
    eps: float


StepSchedule = Fixed | TenfoldDrops | Cosine

NAMED_SCHEDULES = ("fixed-quarter", "gama", "md2", "md3")


def _check_points(points, T, what):
    edges = (0, *points, T)
    if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
        raise ValueError(f"{what} must be strictly increasing inside (0, {T}): {points}")


def validate(s: StepSchedule, T: int) -> None:
    """Raise ValueError if ``s`` is not usable over ``T`` iterations."""
    if T <= 0:
        raise ValueError("T must be positive")
    if isinstance(s, Fixed):
        if not s.eta >= 0:
            raise ValueError(f"step size must be non-negative, got {s.eta}")
    elif isinstance(s, TenfoldDrops):
        if not s.eta0 > 0:
            raise ValueError("initial step size must be positive")
        _check_points(s.drop_points, T, "drop points")
    elif isinstance(s, Cosine):
        if not s.eps >= 0:
            raise ValueError("eps must be non-negative")
        _check_points(s.stage_boundaries, T, "stage boundaries")
    else:
        raise TypeError(f"not a step schedule: {s!r}")


def step_size(s: StepSchedule, t: int, T: int) -> float:
    """Step size at 0-based iteration ``t`` of a ``T``-iteration run."""
    if not 0 <= t < T:
        raise ValueError(f"iteration {t} outside [0, {T})")
    if isinstance(s, Fixed):
        return float(s.eta)
    if isinstance(s, TenfoldDrops):
        drops = sum(1 for d in s.drop_points if d <= t)
        return s.eta0 * 10.0 ** (-drops)
    if isinstance(s, Cosine):
        edges = (0, *s.stage_boundaries, T)
        for a, b in zip(edges[:-1], edges[1:]):
            if a <= t < b:
                return s.eps * (1.0 + math.cos(math.pi * (t - a) / (b - a)))
        raise ValueError(f"iteration {t} not covered by boundaries {s.stage_boundaries}")
    raise TypeError(f"not a step schedule: {s!r}")


def step_sizes(s: StepSchedule, T: int) -> list[float]:
    validate(s, T)
    return [step_size(s, t, T) for t in range(T)]


def make_paper_schedule(name: str, eps: float, T: int) -> StepSchedule:
    """Named schedule configurations.

    ``fixed-quarter`` holds ``eps/4``; ``gama`` starts at ``2*eps`` and drops
    tenfold at iterations 60 and 85 (scaled by ``T/100`` for other budgets);
    ``md2``/``md3`` restart a cosine at ``2*eps`` on the same iterations at
    which a 2- or 3-stage loss schedule switches.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if T <= 0:
        raise ValueError("T must be positive")
    if name == "fixed-quarter":
        return Fixed(eps / 4)
    if name == "gama":
        drops = sorted({60 * T // 100, 85 * T // 100} - {0})
        sched = TenfoldDrops(2 * eps, tuple(drops))
    elif name in ("md2", "md3"):
        K = 2 if name == "md2" else 3
        if T < K:
            raise ValueError(f"{name} needs T >= {K}")
        sched = Cosine(tuple(stage_start(k, T, K) for k in range(1, K)), eps)
    elif name.startswith("fixed:"):
        sched = Fixed(parse_number(name.split(":", 1)[1]))
    else:
        raise ValueError(
            f"unknown schedule {name!r}; expected fixed-quarter, gama, md2, md3 or fixed:<value>"
        )
    validate(sched, T)
    return sched


def parse_number(text: str) -> float:
    """Parse ``"0.03"`` or ``"8/255"``."""
    text = str(text).strip()
    try:
        return float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {text!r}") from None
