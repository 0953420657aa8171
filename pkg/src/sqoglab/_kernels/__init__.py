"""Kernel backend selection: compiled core if importable, numpy otherwise.

Set SQOGLAB_KERNELS=numpy to force the fallback (used by the benchmark and the
backend-parity tests). Results are deterministic within a backend; across
backends they agree to floating-point roundoff, not bit-for-bit.
"""

from __future__ import annotations

import os

from . import _numpy

if os.environ.get("SQOGLAB_KERNELS", "").lower() == "numpy":
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _numpy
        BACKEND = "numpy"

linear_forward = _impl.linear_forward
relu_forward = _impl.relu_forward
relu_backward = _impl.relu_backward
linear_backward = _impl.linear_backward
mlp_forward = _impl.mlp_forward
mlp_forward_cached = _impl.mlp_forward_cached
mlp_backward = _impl.mlp_backward
adam_step_inplace = _impl.adam_step_inplace

__all__ = [
    "BACKEND",
    "adam_step_inplace",
    "linear_backward",
    "linear_forward",
    "mlp_backward",
    "mlp_forward",
    "mlp_forward_cached",
    "relu_backward",
    "relu_forward",
]
