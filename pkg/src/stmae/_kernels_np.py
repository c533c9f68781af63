"""Pure-numpy implementations of the hot inner kernels.

Row-wise kernels take a 2-D (rows, dim) view; elementwise kernels take a
flat 1-D view. `kernels.py` picks between this module and the numba twin.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def layernorm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gamma + beta
    return y.astype(x.dtype, copy=False), mean, rstd


def layernorm_bwd(g, x, gamma, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    gg = g * gamma
    m1 = gg.mean(axis=1, keepdims=True)
    m2 = (gg * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (gg - m1 - xhat * m2)
    return dx.astype(x.dtype, copy=False), dgamma, dbeta


def softmax_fwd(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, g):
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)


def gelu_fwd(x):
    return (0.5 * x * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype, copy=False)


def gelu_bwd(x, g):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (g * (cdf + x * pdf)).astype(x.dtype, copy=False)


def adamw_update(p, g, m, v, lr, b1, b2, eps, wd, t):
    """One fused AdamW step, in place on p/m/v (flat views)."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    mhat = m / (1.0 - b1**t)
    vhat = v / (1.0 - b2**t)
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + wd * p)
