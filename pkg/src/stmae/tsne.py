"""Exact (non-approximate) t-SNE for small point sets.

Per-point Gaussian bandwidths are found by binary search so each
conditional distribution has entropy log2(perplexity) to within 1e-5
bits. Optimization runs in two phases over `iters` steps: the first half
uses early exaggeration with momentum, the second half plain gradient
descent with a backtracking line search, which makes the recorded KL
divergence non-increasing over that phase.
"""

import numpy as np

from .errors import ConfigError, DataError, NumericError

_ENTROPY_TOL = 1e-5
_EXAGGERATION = 4.0


def _pairwise_sq_dists(x):
    s = np.sum(x * x, axis=1)
    d2 = s[:, None] + s[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _row_entropy_bits(p):
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def conditional_probabilities(x, perplexity, max_iter=128):
    """Row-stochastic P[i, j] = p(j|i) with per-row entropy calibration.

    Returns (P, worst_entropy_error_bits).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    d2 = _pairwise_sq_dists(x)
    off = ~np.eye(n, dtype=bool)
    if np.any(d2[off].reshape(n, n - 1).max(axis=1) <= 0):
        raise DataError("degenerate input: some row equals every other row")
    target = np.log2(perplexity)
    p = np.zeros((n, n))
    worst = 0.0
    for i in range(n):
        di = d2[i, off[i]]
        lo, hi = 0.0, np.inf
        beta = 1.0
        for _ in range(max_iter):
            w = np.exp(-beta * (di - di.min()))
            pi = w / w.sum()
            h = _row_entropy_bits(pi)
            err = h - target
            if abs(err) < _ENTROPY_TOL:
                break
            if err > 0:  # entropy too high -> sharpen
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (lo + beta) / 2.0
        worst = max(worst, abs(h - target))
        p[i, off[i]] = pi
    return p, worst


def _q_matrix(y):
    num = 1.0 / (1.0 + _pairwise_sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return np.maximum(q, 1e-12), num


def _kl(p, q):
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _grad(p, q, num, y):
    pq = (p - q) * num
    return 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)


def tsne(x, perplexity=15.0, iters=500, seed=0, learning_rate=None):
    """Embed rows of x into 2-D. Returns (Y, kl_history).

    Deterministic given the seed; requires n > 3 * perplexity.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n <= 3 * perplexity:
        raise ConfigError(
            f"t-SNE needs n > 3*perplexity, got n={n}, perplexity={perplexity}")
    if iters < 2:
        raise ConfigError("t-SNE needs at least 2 iterations")
    cond, _ = conditional_probabilities(x, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)
    p /= p.sum()

    rng = np.random.default_rng([int(seed), 0x7473])
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    lr = float(learning_rate) if learning_rate is not None else max(n / 12.0, 50.0)

    phase1 = iters // 2
    kl_history = []
    update = np.zeros_like(y)
    for it in range(phase1):
        p_eff = p * _EXAGGERATION
        p_eff = p_eff / p_eff.sum()
        q, num = _q_matrix(y)
        g = _grad(p_eff, q, num, y)
        momentum = 0.5 if it < phase1 // 2 else 0.8
        update = momentum * update - lr * g
        y = y + update
        y = y - y.mean(axis=0)
        kl_history.append(_kl(p, q))

    step = lr
    q, num = _q_matrix(y)
    kl_now = _kl(p, q)
    for _ in range(phase1, iters):
        g = _grad(p, q, num, y)
        # backtracking: shrink until the true objective does not increase
        for _ in range(40):
            y_try = y - step * g
            y_try = y_try - y_try.mean(axis=0)
            q_try, num_try = _q_matrix(y_try)
            kl_try = _kl(p, q_try)
            if kl_try <= kl_now:
                break
            step *= 0.5
        else:
            y_try, q_try, num_try, kl_try = y, q, num, kl_now
        y, q, num, kl_now = y_try, q_try, num_try, kl_try
        kl_history.append(kl_now)
        step *= 1.1
    if not np.all(np.isfinite(y)):
        raise NumericError("t-SNE diverged to non-finite coordinates")
    return y, np.asarray(kl_history)


def kmeans2(y, seed=0, iters=100):
    """Plain 2-means for checking blob recovery on t-SNE outputs."""
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng([int(seed), 0x6B6D])
    centers = y[rng.choice(len(y), size=2, replace=False)]
    assign = np.full(len(y), -1, dtype=np.int64)
    for _ in range(iters):
        d = np.linalg.norm(y[:, None, :] - centers[None, :, :], axis=-1)
        new_assign = d.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for k in (0, 1):
            if np.any(assign == k):
                centers[k] = y[assign == k].mean(axis=0)
    return assign
