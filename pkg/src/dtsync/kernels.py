"""Backend selection for the per-slot kernels.

The compiled extension is used when it imports and ``DTSYNC_PURE_PYTHON``
is not set to ``1``; otherwise the numpy implementation is used. Both
expose ``mismatch_vector`` and ``slot_step`` with identical signatures.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DTSYNC_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None
    else:
        _impl = _compiled
        BACKEND = "cython"
else:
    _compiled = None

mismatch_vector = _impl.mismatch_vector
slot_step = _impl.slot_step


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ('cython', 'python' or None=active)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            try:
                from . import _ckernels
            except ImportError as exc:
                raise RuntimeError("compiled kernels are not built") from exc
            return _ckernels
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
