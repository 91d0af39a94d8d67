"""Reference computations that share no code with the package.

High-precision scalar loss evaluation (mpmath), central finite differences,
brute-force nearest points, and the step schedules written out per branch.
"""

import math

import mpmath
import numpy as np

mpmath.mp.dps = 40


def _mp(z):
    return [mpmath.mpf(float(v)) for v in z]


def ce_mp(z, y):
    # the subtraction cancels almost completely when CE is tiny; 400 digits
    # keep full relative precision down to about 1e-300
    with mpmath.workdps(400):
        z = _mp(z)
        return +(-z[y] + mpmath.log(mpmath.fsum(mpmath.exp(v) for v in z)))


def cw_mp(z, y):
    z = _mp(z)
    return -z[y] + max(v for j, v in enumerate(z) if j != y)


def dlr_mp(z, y):
    z = _mp(z)
    s = sorted(z, reverse=True)
    other = max(v for j, v in enumerate(z) if j != y)
    return -(z[y] - other) / (s[0] - s[2])


MP_LOSSES = {"ce": ce_mp, "cw": cw_mp, "dlr": dlr_mp}


def central_diff(f, x, h):
    """Gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-12):
    """Relative error; below ``floor`` in norm both vectors count as zero."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    diff = np.linalg.norm(a - b)
    if denom <= floor:
        return 0.0 if diff <= floor else np.inf
    return diff / denom


def mlp_logits(layers, x):
    """Plain-python forward pass: ``layers`` is a list of (W, b, relu?)."""
    h = [float(v) for v in x]
    for W, b, relu in layers:
        out = []
        for row, bias in zip(W, b):
            s = bias
            for w, v in zip(row, h):
                s += w * v
            out.append(max(s, 0.0) if relu else s)
        h = out
    return h


def min_relu_margin(layers, x):
    """Smallest |pre-activation| over the ReLU units at ``x``."""
    h = [float(v) for v in x]
    best = float("inf")
    for W, b, relu in layers:
        pre = [bias + sum(w * v for w, v in zip(row, h)) for row, bias in zip(W, b)]
        if relu:
            best = min([best] + [abs(p) for p in pre])
            pre = [max(p, 0.0) for p in pre]
        h = pre
    return best


def plain_layers(model):
    return [(l.weight.tolist(), l.bias.tolist(), l.activation == "relu") for l in model.layers]


def l2_disk_nearest_grid(c, o, eps, res=1e-3):
    """Nearest point to ``c`` among grid points of spacing ``res`` inside the
    disk of radius ``eps`` around ``o`` (plus the exact boundary circle)."""
    c, o = np.asarray(c, float), np.asarray(o, float)
    n = int(math.ceil(eps / res))
    g = np.arange(-n, n + 1) * res
    P = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    P = P[(P * P).sum(1) <= eps * eps]
    th = np.linspace(0, 2 * np.pi, int(2 * np.pi * eps / res) + 8)
    P = np.vstack([P, eps * np.c_[np.cos(th), np.sin(th)]]) + o
    return P[np.argmin(((P - c) ** 2).sum(1))]


def gama_step(t, eps):
    if t < 60:
        return 2 * eps
    if t < 85:
        return 0.2 * eps
    return 0.02 * eps


def md2_step(t, eps, T=100):
    Tp = T // 2
    if t < Tp:
        return eps * (1 + math.cos(math.pi * t / Tp))
    return eps * (1 + math.cos(math.pi * (t - Tp) / (T - Tp)))


def md3_step(t, eps, b1=34, b2=67, T=100):
    if t < b1:
        return eps * (1 + math.cos(math.pi * t / b1))
    if t < b2:
        return eps * (1 + math.cos(math.pi * (t - b1) / (b2 - b1)))
    return eps * (1 + math.cos(math.pi * (t - b2) / (T - b2)))
