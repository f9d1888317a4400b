"""Hot kernels for the Kronecker-sum layer, with backend selection.

Two interchangeable backends implement the same six functions (``kron2``,
``compose``, ``apply_forward``, ``apply_grad_x``, ``apply_grad_a``,
``apply_grad_s``):

* ``_core`` -- Cython extension, built at install time when a compiler is
  available;
* ``fallback`` -- pure numpy/einsum.

Import-time selection prefers the compiled core; set ``PHM_PURE_PYTHON=1``
to force the fallback.  ``available_backends()`` exposes every importable
backend so the benchmark can compare them side by side.
"""

import os

from . import fallback
from .alloc import AllocationLog, track_allocations, tracked_empty

__all__ = [
    "kron2", "compose", "apply_forward", "apply_grad_x", "apply_grad_a",
    "apply_grad_s", "backend_name", "available_backends",
    "AllocationLog", "track_allocations", "tracked_empty",
]


def _load_compiled():
    try:
        from . import _core
        return _core
    except ImportError:
        return None


if os.environ.get("PHM_PURE_PYTHON"):
    _impl = fallback
else:
    _impl = _load_compiled() or fallback

kron2 = _impl.kron2
compose = _impl.compose
apply_forward = _impl.apply_forward
apply_grad_x = _impl.apply_grad_x
apply_grad_a = _impl.apply_grad_a
apply_grad_s = _impl.apply_grad_s


def backend_name() -> str:
    """Name of the backend in use: 'compiled' or 'numpy'."""
    return _impl.NAME


def available_backends() -> dict:
    """All importable backends keyed by name."""
    out = {fallback.NAME: fallback}
    core = _load_compiled()
    if core is not None:
        out[core.NAME] = core
    return out
