"""Backend dispatch for the hot kernels.

Two interchangeable implementations exist:

* ``_jit``       — numba ``@njit`` loops (fast; default when importable)
* ``_reference`` — pure numpy/python (no compilation; always available)

The active backend is chosen once at import time from the environment
variable ``LCCOUNT_KERNELS``:

* ``auto``  (default) — numba if it imports, else the reference backend
* ``numba`` — require the jit backend, fail loudly if numba is missing
* ``numpy`` — force the reference backend

``lccount.kernels.BACKEND`` reports which one won.
"""

from __future__ import annotations

import os

_REQUESTED = os.environ.get("LCCOUNT_KERNELS", "auto").strip().lower()
if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"LCCOUNT_KERNELS={_REQUESTED!r} is not one of 'auto', 'numba', 'numpy'"
    )

if _REQUESTED == "numpy":
    from . import _reference as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _jit as _impl

        BACKEND = "numba"
    except ImportError:
        if _REQUESTED == "numba":
            raise
        from . import _reference as _impl

        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_input_grad = _impl.conv2d_input_grad
conv2d_param_grad = _impl.conv2d_param_grad
upsample2x = _impl.upsample2x
upsample2x_grad = _impl.upsample2x_grad
label_components = _impl.label_components
edt_squared = _impl.edt_squared
watershed_flood = _impl.watershed_flood

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_input_grad",
    "conv2d_param_grad",
    "upsample2x",
    "upsample2x_grad",
    "label_components",
    "edt_squared",
    "watershed_flood",
]
