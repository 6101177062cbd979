"""Kernel backend selection.

The sequential scan recurrence (with its discretization step) and bilinear
sampling are the inner loops that dominate runtime.  A compiled Cython
extension is used when it is available; otherwise a pure-numpy fallback is
selected.  Set GLSR_BACKEND to "python" or "compiled" to force a choice.
"""

import os

from . import _kernels_py

_forced = os.environ.get("GLSR_BACKEND", "").strip().lower()

if _forced == "python":
    _impl = _kernels_py
    COMPILED = False
else:
    try:
        from . import _kernels_ext_wrapper as _compiled

        _impl = _compiled
        COMPILED = True
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = _kernels_py
        COMPILED = False


def impl():
    return _impl


def get(name):
    """Return a named backend module: 'python' or 'compiled'."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels_ext_wrapper

        return _kernels_ext_wrapper
    raise ValueError(f"unknown backend {name!r}")
