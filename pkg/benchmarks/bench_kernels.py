"""Timing comparison of the numba and numpy kernel backends.

Runs each hot kernel on transformer-shaped inputs and reports per-call
wall time for both implementations plus their max absolute disagreement.
The two backends reduce in different orders, so small differences are
expected; anything above 1e-5 would be a bug.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--rows R] [--dim D]
"""

import argparse
import time

import numpy as np


def _time(fn, args, repeats):
    fn(*args)  # warm up (jit compile on the numba side)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _fresh_adamw_args(rows, dim, rng):
    n = rows * dim
    return (rng.normal(size=n).astype(np.float32),
            rng.normal(size=n).astype(np.float32) * 0.01,
            np.zeros(n, dtype=np.float32),
            np.full(n, 1e-4, dtype=np.float32),
            np.float32(1e-3), np.float32(0.9), np.float32(0.95),
            np.float32(1e-8), np.float32(0.05), 3)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--rows", type=int, default=8192,
                    help="token rows per call (batch x sequence)")
    ap.add_argument("--dim", type=int, default=128)
    args = ap.parse_args()

    from stmae import _kernels_np
    try:
        from stmae import _kernels_nb
    except ImportError:
        raise SystemExit("numba backend unavailable; nothing to compare")

    rng = np.random.default_rng(0)
    x = rng.normal(size=(args.rows, args.dim)).astype(np.float32)
    g = rng.normal(size=(args.rows, args.dim)).astype(np.float32)
    gamma = rng.normal(size=args.dim).astype(np.float32)
    beta = rng.normal(size=args.dim).astype(np.float32)
    xf = x.reshape(-1)
    gf = g.reshape(-1)

    y_np, mean, rstd = _kernels_np.layernorm_fwd(x, gamma, beta, 1e-5)
    sm_np = _kernels_np.softmax_fwd(x)

    cases = [
        ("layernorm_fwd", (x, gamma, beta, 1e-5), lambda r: r[0]),
        ("layernorm_bwd", (g, x, gamma, mean, rstd), lambda r: r[0]),
        ("softmax_fwd", (x,), lambda r: r),
        ("softmax_bwd", (sm_np, g), lambda r: r),
        ("gelu_fwd", (xf,), lambda r: r),
        ("gelu_bwd", (xf, gf), lambda r: r),
    ]

    print(f"{args.rows} rows x {args.dim} dim, best of {args.repeats}")
    print(f"{'kernel':15s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s} {'max|diff|':>10s}")
    for name, call_args, pick in cases:
        f_np = getattr(_kernels_np, name)
        f_nb = getattr(_kernels_nb, name)
        t_np = _time(f_np, call_args, args.repeats)
        t_nb = _time(f_nb, call_args, args.repeats)
        diff = float(np.max(np.abs(np.asarray(pick(f_np(*call_args)), dtype=np.float64)
                                   - np.asarray(pick(f_nb(*call_args)), dtype=np.float64))))
        print(f"{name:15s} {t_np * 1e3:9.3f}ms {t_nb * 1e3:9.3f}ms "
              f"{t_np / t_nb:7.2f}x {diff:10.2e}")

    # adamw mutates its buffers, so each timing needs fresh state
    for name, mod in (("numpy", _kernels_np), ("numba", _kernels_nb)):
        a = _fresh_adamw_args(args.rows, args.dim, np.random.default_rng(1))
        mod.adamw_update(*a)  # warm up
        best = float("inf")
        for _ in range(args.repeats):
            a = _fresh_adamw_args(args.rows, args.dim, np.random.default_rng(1))
            t0 = time.perf_counter()
            mod.adamw_update(*a)
            best = min(best, time.perf_counter() - t0)
        if name == "numpy":
            t_np, p_np = best, a[0]
        else:
            t_nb, p_nb = best, a[0]
    diff = float(np.max(np.abs(p_np.astype(np.float64) - p_nb.astype(np.float64))))
    print(f"{'adamw_update':15s} {t_np * 1e3:9.3f}ms {t_nb * 1e3:9.3f}ms "
          f"{t_np / t_nb:7.2f}x {diff:10.2e}")


if __name__ == "__main__":
    main()
