"""Surrogate objectives (CE, CW, DLR), their logit gradients, and the
stage selector / convex combiner used by the multi-stage attack.

Every function accepts a single logit vector of shape ``(C,)`` with an
integer label, or a batch of shape ``(N, C)`` with labels of shape ``(N,)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

# |z_pi1 - z_pi3| at or below this is treated as degenerate for DLR
DLR_GUARD = 1e-12


class DegenerateLogitsError(ValueError):
    """Raised when DLR is evaluated where its denominator vanishes."""


class SurrogateKind(str, enum.Enum):
    CE = "ce"
    CW = "cw"
    DLR = "dlr"

    @classmethod
    def parse(cls, name: "str | SurrogateKind") -> "SurrogateKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown surrogate {name!r}; expected one of ce, cw, dlr"
            ) from None

    @property
    def label(self) -> str:
        return self.value.upper()


@dataclass(frozen=True)
class LossSchedule:
    """Ordered surrogates, one per stage."""

    stages: tuple[SurrogateKind, ...]

    def __post_init__(self):
        stages = tuple(SurrogateKind.parse(s) for s in self.stages)
        if not stages:
            raise ValueError("a loss schedule needs at least one stage")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def parse(cls, text: str) -> "LossSchedule":
        """Build from ``"ce,cw"`` or ``"CE&CW"``."""
        parts = [p for p in text.replace("&", ",").split(",") if p.strip()]
        return cls(tuple(parts))

    @property
    def K(self) -> int:
        return len(self.stages)

    @property
    def label(self) -> str:
        return "&".join(s.label for s in self.stages)


@dataclass(frozen=True)
class ConvexCombo:
    """``gamma * first + (1 - gamma) * second``."""

    gamma: float
    first: SurrogateKind
    second: SurrogateKind

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        object.__setattr__(self, "first", SurrogateKind.parse(self.first))
        object.__setattr__(self, "second", SurrogateKind.parse(self.second))


def _as_batch(z, y):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    Y = np.atleast_1d(np.asarray(y))
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise ValueError(f"logits must have shape (C,) or (N, C) with C >= 2, got {z.shape}")
    if Y.shape != (Z.shape[0],):
        raise ValueError(f"labels shape {Y.shape} does not match logits {Z.shape}")
    if not np.issubdtype(Y.dtype, np.integer):
        if not np.all(Y == np.floor(Y)):
            raise ValueError("labels must be integers")
        Y = Y.astype(np.int64)
    if np.any(Y < 0) or np.any(Y >= Z.shape[1]):
        raise ValueError(f"label out of range [0, {Z.shape[1]})")
    return Z, Y, single


def _best_other(Z, Y):
    """Index of max_{j != y} z_j, lowest index on ties."""
    rows = np.arange(Z.shape[0])
    masked = Z.copy()
    masked[rows, Y] = -np.inf
    return np.argmax(masked, axis=1)


def _ce(Z, Y):
    rows = np.arange(Z.shape[0])
    top = np.argmax(Z, axis=1)
    m = Z[rows, top]
    e = np.exp(Z - m[:, None])
    # log1p over the non-argmax mass keeps CE accurate when it is tiny
    e_rest = e.copy()
    e_rest[rows, top] = 0.0
    rest = e_rest.sum(axis=1)
    value = (m - Z[rows, Y]) + np.log1p(rest)
    grad = e / (1.0 + rest)[:, None]
    grad[rows, Y] -= 1.0
    return value, grad, np.zeros(Z.shape[0], dtype=bool)


def _cw(Z, Y):
    rows = np.arange(Z.shape[0])
    j = _best_other(Z, Y)
    value = Z[rows, j] - Z[rows, Y]
    grad = np.zeros_like(Z)
    grad[rows, j] = 1.0
    grad[rows, Y] -= 1.0
    return value, grad, np.zeros(Z.shape[0], dtype=bool)


def _dlr(Z, Y):
    n, C = Z.shape
    if C < 3:
        raise ValueError("DLR needs at least 3 classes")
    rows = np.arange(n)
    j = _best_other(Z, Y)
    order = np.argsort(-Z, axis=1, kind="stable")
    p1, p3 = order[:, 0], order[:, 2]
    num = Z[rows, Y] - Z[rows, j]
    den = Z[rows, p1] - Z[rows, p3]
    bad = ~(np.abs(den) > DLR_GUARD)
    safe = np.where(bad, 1.0, den)
    value = -num / safe
    grad = np.zeros_like(Z)
    grad[rows, Y] -= 1.0 / safe
    grad[rows, j] += 1.0 / safe
    coef = num / safe**2
    grad[rows, p1] += coef
    grad[rows, p3] -= coef
    value[bad] = np.nan
    grad[bad] = 0.0
    return value, grad, bad


_IMPL = {SurrogateKind.CE: _ce, SurrogateKind.CW: _cw, SurrogateKind.DLR: _dlr}


def batch_value_and_gradient(kind, Z, Y):
    """Vectorised loss values and logit gradients.

    Returns ``(values, grads, bad)`` where ``bad`` flags rows whose loss is
    undefined (degenerate DLR denominator). Bad rows carry ``nan`` values and
    zero gradients instead of raising, so callers can isolate them.
    """
    if isinstance(kind, ConvexCombo):
        v1, g1, b1 = _IMPL[kind.first](Z, Y)
        v2, g2, b2 = _IMPL[kind.second](Z, Y)
        g = kind.gamma
        return g * v1 + (1.0 - g) * v2, g * g1 + (1.0 - g) * g2, b1 | b2
    return _IMPL[SurrogateKind.parse(kind)](Z, Y)


def loss_value_and_logit_gradient(kind, z, y):
    """Loss value(s) and exact gradient(s) with respect to the logits.

    Raises:
        DegenerateLogitsError: DLR with ``|z_pi1 - z_pi3| <= DLR_GUARD``.
    """
    Z, Y, single = _as_batch(z, y)
    value, grad, bad = batch_value_and_gradient(kind, Z, Y)
    if bad.any():
        raise DegenerateLogitsError(
            f"DLR denominator at or below {DLR_GUARD} for {int(bad.sum())} row(s)"
        )
    if single:
        return float(value[0]), grad[0]
    return value, grad


def _value(kind, z, y):
    return loss_value_and_logit_gradient(kind, z, y)[0]


def ce_loss(z, y):
    """Cross-entropy ``-z_y + logsumexp(z)``; always >= 0."""
    return _value(SurrogateKind.CE, z, y)


def cw_loss(z, y):
    """Margin ``-z_y + max_{j != y} z_j``; positive iff misclassified."""
    return _value(SurrogateKind.CW, z, y)


def dlr_loss(z, y):
    """Difference of logits ratio ``-(z_y - max_{j != y} z_j) / (z_pi1 - z_pi3)``."""
    return _value(SurrogateKind.DLR, z, y)


def convex_loss_and_gradient(combo: ConvexCombo, z, y):
    return loss_value_and_logit_gradient(combo, z, y)


def stage_of(t: int, T: int, K: int) -> int:
    """Stage active at iteration ``t`` (0-based) when ``T`` steps are split
    into ``K`` equal stages: ``min(floor(t*K/T), K-1)``."""
    if not 1 <= K <= T:
        raise ValueError(f"need 1 <= K <= T, got K={K}, T={T}")
    if not 0 <= t < T:
        raise ValueError(f"iteration {t} outside [0, {T})")
    return min(t * K // T, K - 1)


def stage_start(k: int, T: int, K: int) -> int:
    """First iteration of stage ``k``; equals ``ceil(k*T/K)``."""
    if not 0 <= k <= K:
        raise ValueError(f"stage {k} outside [0, {K}]")
    return -((-k * T) // K)


def stage_bounds(T: int, K: int) -> list[tuple[int, int]]:
    """Half-open ``[start, stop)`` iteration ranges of every stage."""
    if not 1 <= K <= T:
        raise ValueError(f"need 1 <= K <= T, got K={K}, T={T}")
    return [(stage_start(k, T, K), stage_start(k + 1, T, K)) for k in range(K)]


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(z) -> float:
    z = np.asarray(z, dtype=np.float64)
    m = z.max()
    return float(m + math.log(np.exp(z - m).sum()))
