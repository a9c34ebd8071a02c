"""Independent reference implementations used by the test suite.

Everything here is written with plain loops or direct formulae so it shares
no code path with the package under test.
"""

from __future__ import annotations

import math

import numpy as np


def rel_err(a, b, floor: float = 1e-6) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_diff(f, params, h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of scalar ``f()`` w.r.t. each array in ``params`` (mutated in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = f()
            flat[k] = old - h
            down = f()
            flat[k] = old
            gflat[k] = (up - down) / (2 * h)
        out.append(g)
    return out


def mlp_forward(layers, x):
    """layers: list of (W, b, activation)."""
    h = [float(v) for v in x]
    for W, b, act in layers:
        nxt = []
        for i in range(len(b)):
            a = b[i] + sum(W[i][j] * h[j] for j in range(len(h)))
            if act == "relu":
                a = a if a > 0 else 0.0
            elif act == "softplus":
                a = math.log1p(math.exp(a)) if a < 30 else a
            nxt.append(a)
        h = nxt
    return np.array(h)


def pearson(a, b) -> float:
    n = len(a)
    ma = sum(a) / n
    mb = sum(b) / n
    sab = sum((a[i] - ma) * (b[i] - mb) for i in range(n))
    saa = sum((a[i] - ma) ** 2 for i in range(n))
    sbb = sum((b[i] - mb) ** 2 for i in range(n))
    if saa == 0 or sbb == 0:
        return float("nan")
    return sab / math.sqrt(saa * sbb)


def mse(f, a) -> list[float]:
    out = []
    for fi, ai in zip(f, a):
        out.append(sum((x - y) ** 2 for x, y in zip(fi, ai)) / len(fi))
    return out


def corr(paths) -> np.ndarray:
    n = len(paths)
    return np.array([[pearson(paths[i], paths[j]) for j in range(n)] for i in range(n)])


def xcorr(paths) -> np.ndarray:
    n = len(paths)
    return np.array(
        [[pearson(list(paths[i][:-1]), list(paths[j][1:])) for j in range(n)] for i in range(n)]
    )


def row_mean_abs_diff(f, a) -> list[float]:
    out = []
    for i in range(len(f)):
        vals = [abs(f[i][j] - a[i][j]) for j in range(len(f[i]))]
        vals = [v for v in vals if not math.isnan(v)]
        out.append(sum(vals) / len(vals) if vals else float("nan"))
    return out


def cap(a, b, lag: int = 0) -> float:
    S, K = len(a), len(a[0])
    ma = [sum(a[s][k] for s in range(S)) / S for k in range(K)]
    mb = [sum(b[s][k] for s in range(S)) / S for k in range(K)]
    return pearson(ma[: K - lag], mb[lag:])


def acp(a, b, lag: int = 0) -> float:
    K = len(a[0])
    vals = [pearson(list(a[s][: K - lag]), list(b[s][lag:])) for s in range(len(a))]
    vals = [v for v in vals if not math.isnan(v)]
    return sum(vals) / len(vals) if vals else float("nan")


def arma11_css(series, mu, phi, theta) -> list[float]:
    eps = [0.0]
    for t in range(1, len(series)):
        eps.append(series[t] - mu - phi * (series[t - 1] - mu) - theta * eps[t - 1])
    return eps


def affine_decoder_expected_sq(y, c, a, mu, var) -> float:
    """E||y - (c + a z)||^2 for z ~ N(mu, var), scalar z and vector output."""
    y, c, a = (np.asarray(v, dtype=float) for v in (y, c, a))
    r = y - c - a * mu
    return float(r @ r + (a @ a) * var)
