"""Kernel backend selection.

The compiled extension is preferred when it imports cleanly; otherwise the
pure-numpy fallback is used. ``VITGRADE_KERNELS=numpy`` or
``VITGRADE_KERNELS=cython`` forces a backend (the latter raises if the
extension is missing). Both backends implement the same API and are
deterministic; they may differ in the last ulp because libm and numpy's
vectorized transcendentals round differently.
"""

import os

_requested = os.environ.get("VITGRADE_KERNELS", "auto").lower()

if _requested == "numpy":
    from . import numpy_backend as _backend
elif _requested == "cython":
    from . import cython_adapter as _backend
elif _requested == "auto":
    try:
        from . import cython_adapter as _backend
    except ImportError:
        from . import numpy_backend as _backend
else:
    raise ImportError(f"unknown VITGRADE_KERNELS value: {_requested!r}")

gelu = _backend.gelu
gelu_grad = _backend.gelu_grad
layernorm = _backend.layernorm
layernorm_grad = _backend.layernorm_grad
softmax_rows = _backend.softmax_rows
softmax_rows_grad = _backend.softmax_rows_grad
stamp_gaussian_max = _backend.stamp_gaussian_max


def backend_name() -> str:
    """Name of the active kernel backend ("cython" or "numpy")."""
    return _backend.NAME
