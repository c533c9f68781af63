"""Backend selection for the hot inner kernels.

Default is the numba backend when numba imports cleanly; set
``STMAE_BACKEND=numpy`` to force the pure-numpy fallback (or
``STMAE_BACKEND=numba`` to require the jitted path). Results are
bit-reproducible within a backend; across backends they agree to
floating-point tolerance only, because reduction order differs.
"""

import os

from . import _kernels_np
from .errors import ConfigError

_KERNEL_NAMES = (
    "layernorm_fwd",
    "layernorm_bwd",
    "softmax_fwd",
    "softmax_bwd",
    "gelu_fwd",
    "gelu_bwd",
    "adamw_update",
)


def _select_backend():
    requested = os.environ.get("STMAE_BACKEND", "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise ConfigError(f"STMAE_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy", _kernels_np
    try:
        from . import _kernels_nb
    except ImportError:
        if requested == "numba":
            raise ConfigError("STMAE_BACKEND=numba but numba is not importable")
        return "numpy", _kernels_np
    return "numba", _kernels_nb


BACKEND, _impl = _select_backend()

layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
adamw_update = _impl.adamw_update


def kernel_names():
    return _KERNEL_NAMES
