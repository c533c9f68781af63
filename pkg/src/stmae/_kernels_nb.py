"""Numba-jitted twins of the kernels in `_kernels_np.py`.

Same signatures and semantics; serial loops only, so results are
deterministic within this backend. First call per dtype pays the JIT
cost (cached on disk afterwards).
"""

import math

import numpy as np
from numba import njit

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


@njit(cache=True)
def layernorm_fwd(x, gamma, beta, eps):
    rows, dim = x.shape
    y = np.empty_like(x)
    mean = np.empty(rows, dtype=x.dtype)
    rstd = np.empty(rows, dtype=x.dtype)
    for r in range(rows):
        s = 0.0
        for j in range(dim):
            s += x[r, j]
        mu = s / dim
        sq = 0.0
        for j in range(dim):
            d = x[r, j] - mu
            sq += d * d
        rs = 1.0 / math.sqrt(sq / dim + eps)
        mean[r] = mu
        rstd[r] = rs
        for j in range(dim):
            y[r, j] = (x[r, j] - mu) * rs * gamma[j] + beta[j]
    return y, mean, rstd


@njit(cache=True)
def layernorm_bwd(g, x, gamma, mean, rstd):
    rows, dim = x.shape
    dx = np.empty_like(x)
    dgamma = np.zeros(dim, dtype=x.dtype)
    dbeta = np.zeros(dim, dtype=x.dtype)
    for r in range(rows):
        mu = mean[r]
        rs = rstd[r]
        m1 = 0.0
        m2 = 0.0
        for j in range(dim):
            xhat = (x[r, j] - mu) * rs
            gg = g[r, j] * gamma[j]
            dgamma[j] += g[r, j] * xhat
            dbeta[j] += g[r, j]
            m1 += gg
            m2 += gg * xhat
        m1 /= dim
        m2 /= dim
        for j in range(dim):
            xhat = (x[r, j] - mu) * rs
            gg = g[r, j] * gamma[j]
            dx[r, j] = rs * (gg - m1 - xhat * m2)
    return dx, dgamma, dbeta


@njit(cache=True)
def softmax_fwd(x):
    rows, dim = x.shape
    y = np.empty_like(x)
    for r in range(rows):
        hi = x[r, 0]
        for j in range(1, dim):
            if x[r, j] > hi:
                hi = x[r, j]
        s = 0.0
        for j in range(dim):
            e = math.exp(x[r, j] - hi)
            y[r, j] = e
            s += e
        for j in range(dim):
            y[r, j] /= s
    return y


@njit(cache=True)
def softmax_bwd(y, g):
    rows, dim = y.shape
    dx = np.empty_like(y)
    for r in range(rows):
        dot = 0.0
        for j in range(dim):
            dot += g[r, j] * y[r, j]
        for j in range(dim):
            dx[r, j] = y[r, j] * (g[r, j] - dot)
    return dx


@njit(cache=True)
def gelu_fwd(x):
    y = np.empty_like(x)
    for i in range(x.size):
        y[i] = 0.5 * x[i] * (1.0 + math.erf(x[i] * _INV_SQRT2))
    return y


@njit(cache=True)
def gelu_bwd(x, g):
    dx = np.empty_like(x)
    for i in range(x.size):
        cdf = 0.5 * (1.0 + math.erf(x[i] * _INV_SQRT2))
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * x[i] * x[i])
        dx[i] = g[i] * (cdf + x[i] * pdf)
    return dx


@njit(cache=True)
def adamw_update(p, g, m, v, lr, b1, b2, eps, wd, t):
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for i in range(p.size):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * (mhat / (math.sqrt(vhat) + eps) + wd * p[i])
