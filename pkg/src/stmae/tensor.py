"""Dense N-d tensors with reverse-mode automatic differentiation.

A module-level tape records every differentiable operation in execution
order; ``backward`` replays it in exact reverse order, summing gradient
contributions for tensors consumed by several operations. Reductions use
a fixed summation order, so a seeded computation is bit-reproducible
within one kernel backend.

Broadcasting is restricted to leading dimensions: a smaller operand must
match the trailing shape of the larger one exactly (bias ``[d]`` against
activations ``[B, S, d]``). Interior size-1 stretching is rejected.
"""

import os
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)

# Finiteness guard on every op output; disable via STMAE_CHECK_FINITE=0.
CHECK_FINITE = os.environ.get("STMAE_CHECK_FINITE", "1") != "0"


class Tensor:
    """N-d float array plus gradient slot, tracked by the active tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in FLOAT_DTYPES else np.float32
        elif np.dtype(dtype).type not in FLOAT_DTYPES:
            raise ShapeError(f"unsupported dtype {dtype}; use float32 or float64")
        # asarray with order="C" keeps 0-d shapes (ascontiguousarray would not)
        self.data = np.asarray(arr, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        active_tape().backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # Operators delegate to the op functions below.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not part of the op suite")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def mean(self, axis=None):
        return mean(self, axis)

    def sum(self, axis=None):
        return tsum(self, axis)


class Tape:
    """Ordered record of executed ops with their backward rules."""

    def __init__(self):
        self._records = []

    def __len__(self):
        return len(self._records)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def record(self, out, inputs, backward_fn):
        self._records.append((out, inputs, backward_fn))

    def clear(self):
        self._records.clear()

    def backward(self, root, clear=True):
        """Seed d(root)/d(root)=1 and replay records in reverse order."""
        if root.data.ndim != 0:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        root.grad = np.ones((), dtype=root.dtype)
        for out, inputs, backward_fn in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            grads = backward_fn(g)
            for inp, gi in zip(inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    # Copy: backward rules may return views/aliases of g.
                    inp.grad = np.array(gi, dtype=inp.dtype, copy=True)
                else:
                    inp.grad = inp.grad + gi
        if clear:
            self.clear()


_TAPE_STACK = [Tape()]
_GRAD_ENABLED = [True]


def active_tape():
    return _TAPE_STACK[-1]


@contextmanager
def no_grad():
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _finite_or_raise(arr, op):
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by op '{op}'")


def _make(out_data, inputs, backward_fn, op):
    _finite_or_raise(out_data, op)
    out = Tensor(out_data, dtype=out_data.dtype)
    if _GRAD_ENABLED[-1] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        active_tape().record(out, inputs, backward_fn)
    return out


def _check_same_dtype(a, b, op):
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype.name} vs {b.dtype.name}")


def _check_leading_broadcast(sa, sb, op):
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if tuple(big[len(big) - len(small):]) != tuple(small):
        raise ShapeError(
            f"{op}: shapes {sa} and {sb} are not leading-broadcast compatible"
        )


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of leading/batch broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise arithmetic ---

def add(a, b):
    if not isinstance(b, Tensor):
        s = a.dtype.type(b)
        return _make(a.data + s, (a,), lambda g: (g,), "add")
    _check_same_dtype(a, b, "add")
    _check_leading_broadcast(a.shape, b.shape, "add")
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward, "add")


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _check_same_dtype(a, b, "sub")
    _check_leading_broadcast(a.shape, b.shape, "sub")
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), backward, "sub")


def mul(a, b):
    if not isinstance(b, Tensor):
        s = a.dtype.type(b)
        return _make(a.data * s, (a,), lambda g: (g * s,), "mul")
    _check_same_dtype(a, b, "mul")
    _check_leading_broadcast(a.shape, b.shape, "mul")
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward, "mul")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


# --- contraction ---

def matmul(a, b):
    """Batched matrix product; batch dims broadcast, inner dims must match."""
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-d, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for shapes {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: shapes {a.shape} x {b.shape}: {exc}") from None

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


# --- shape ops ---

def reshape(a, shape):
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), backward, "reshape")


def transpose(a, axes=None):
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    out = np.ascontiguousarray(np.transpose(a.data, axes))

    def backward(g):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return _make(out, (a,), backward, "transpose")


def concatenate(tensors, axis=0):
    if not tensors:
        raise ShapeError("concatenate: empty tensor list")
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t, "concatenate")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward, "concatenate")


# --- gather / scatter along the patch axis ---

def gather_rows(x, idx):
    """Select rows of x (axis 0) by integer index array."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape[0]} rows")
    out = x.data[idx]

    def backward(g):
        z = np.zeros(x.shape, dtype=x.dtype)
        np.add.at(z, idx, g)
        return (z,)

    return _make(out, (x,), backward, "gather_rows")


def scatter_rows(src, idx, length):
    """Place rows of src at positions idx of a zero tensor with `length` rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (src.shape[0],):
        raise ShapeError(f"scatter_rows: index shape {idx.shape} != ({src.shape[0]},)")
    if np.unique(idx).size != idx.size:
        raise ShapeError("scatter_rows: duplicate indices")
    if idx.size and (idx.min() < 0 or idx.max() >= length):
        raise ShapeError(f"scatter_rows: index out of range for length {length}")
    out = np.zeros((length,) + src.shape[1:], dtype=src.dtype)
    out[idx] = src.data

    def backward(g):
        return (np.ascontiguousarray(g[idx]),)

    return _make(out, (src,), backward, "scatter_rows")


def gather_tokens(x, idx):
    """Per-batch row gather: out[b, v] = x[b, idx[b, v]] for x of shape [B, N, d]."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim != 3 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_tokens: got x {x.shape}, idx {idx.shape}")
    out = np.take_along_axis(x.data, idx[:, :, None], axis=1)
    bidx = np.arange(x.shape[0])[:, None]

    def backward(g):
        z = np.zeros(x.shape, dtype=x.dtype)
        np.add.at(z, (bidx, idx), g)
        return (z,)

    return _make(out, (x,), backward, "gather_tokens")


def scatter_tokens(src, idx, n):
    """Per-batch row scatter into [B, n, d] zeros; indices unique per batch row."""
    idx = np.asarray(idx, dtype=np.int64)
    if src.ndim != 3 or idx.shape != src.shape[:2]:
        raise ShapeError(f"scatter_tokens: got src {src.shape}, idx {idx.shape}")
    out = np.zeros((src.shape[0], n, src.shape[2]), dtype=src.dtype)
    bidx = np.arange(src.shape[0])[:, None]
    out[bidx, idx] = src.data

    def backward(g):
        return (np.ascontiguousarray(np.take_along_axis(g, idx[:, :, None], axis=1)),)

    return _make(out, (src,), backward, "scatter_tokens")


# --- nonlinearities and normalization (hot kernels) ---

def _rows2d(arr):
    return np.ascontiguousarray(arr.reshape(-1, arr.shape[-1]))


def gelu(a):
    flat = np.ascontiguousarray(a.data.reshape(-1))
    out = kernels.gelu_fwd(flat).reshape(a.shape)

    def backward(g):
        gf = np.ascontiguousarray(g.reshape(-1))
        return (kernels.gelu_bwd(flat, gf).reshape(a.shape),)

    return _make(out, (a,), backward, "gelu")


def softmax(a):
    """Softmax along the last axis."""
    x2 = _rows2d(a.data)
    y2 = kernels.softmax_fwd(x2)
    out = y2.reshape(a.shape)

    def backward(g):
        g2 = _rows2d(g)
        return (kernels.softmax_bwd(y2, g2).reshape(a.shape),)

    return _make(out, (a,), backward, "softmax")


def log_softmax(a):
    """Numerically stable log-softmax along the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make(out, (a,), backward, "log_softmax")


def layer_norm(a, gamma, beta, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    _check_same_dtype(a, gamma, "layer_norm")
    _check_same_dtype(a, beta, "layer_norm")
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: scale/shift must have shape ({d},)")
    x2 = _rows2d(a.data)
    y2, mu, rstd = kernels.layernorm_fwd(x2, gamma.data, beta.data, a.dtype.type(eps))
    out = y2.reshape(a.shape)

    def backward(g):
        g2 = _rows2d(g)
        dx, dgamma, dbeta = kernels.layernorm_bwd(g2, x2, gamma.data, mu, rstd)
        return dx.reshape(a.shape), dgamma, dbeta

    return _make(out, (a, gamma, beta), backward, "layer_norm")


# --- reductions ---

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axis = tuple(a % ndim if -ndim <= a < ndim else a for a in axis)
    for a in axis:
        if not 0 <= a < ndim:
            raise ShapeError(f"axis {a} out of range for ndim {ndim}")
    return axis


def mean(a, axis=None):
    axes = _axis_tuple(axis, a.ndim)
    out = a.data.mean(axis=axes)
    n = a.dtype.type(np.prod([a.shape[i] for i in axes]) if axes else 1)

    def backward(g):
        ge = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(ge / n, a.shape),)

    return _make(out, (a,), backward, "mean")


def tsum(a, axis=None):
    axes = _axis_tuple(axis, a.ndim)
    out = a.data.sum(axis=axes)

    def backward(g):
        ge = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(ge, a.shape),)

    return _make(out, (a,), backward, "sum")


# --- verification harness ---

def grad_check(f, x, eps=1e-5, sample=None, seed=0):
    """Compare analytic gradients of scalar-valued f against central differences.

    Returns max over checked coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``. With ``sample=k`` only k
    seeded-random coordinates of x are probed (for large tensors).
    """
    if x.dtype != np.float64:
        raise NumericError("grad_check requires a float64 input tensor")
    if not x.requires_grad:
        raise NumericError("grad_check input must have requires_grad=True")

    x.grad = None
    with Tape() as tape:
        out = f(x)
        if not isinstance(out, Tensor) or out.data.ndim != 0:
            raise ShapeError("grad_check: f must return a scalar tensor")
        tape.backward(out)
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()
    x.grad = None

    flat = x.data.reshape(-1)
    n = flat.size
    if sample is None or sample >= n:
        coords = np.arange(n)
    else:
        coords = np.random.default_rng(seed).choice(n, size=sample, replace=False)

    worst = 0.0
    aflat = analytic.reshape(-1)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        with no_grad():
            hi = float(f(x).data)
        flat[i] = orig - eps
        with no_grad():
            lo = float(f(x).data)
        flat[i] = orig
        numeric = (hi - lo) / (2.0 * eps)
        rel = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, rel)
    return worst
