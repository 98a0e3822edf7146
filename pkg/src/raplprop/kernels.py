"""Kernel selection: the compiled extension when built, else the pure-Python fallback.

Set ``RAPLPROP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

IMPLEMENTATION = "python"

if os.environ.get("RAPLPROP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        IMPLEMENTATION = "compiled"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

enforce_single = _impl.enforce_single
enforce_nested = _impl.enforce_nested

__all__ = ["IMPLEMENTATION", "enforce_single", "enforce_nested"]
