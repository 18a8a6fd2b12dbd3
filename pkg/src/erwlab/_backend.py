"""Kernel selection: the compiled core when importable, else the numpy fallback.

Set ``ERWLAB_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("ERWLAB_PURE_PYTHON", "") not in ("", "0"):
    from . import _pure as kernels
else:
    try:
        from . import _core as kernels
    except ImportError:  # no compiler at install time
        from . import _pure as kernels

BACKEND = kernels.BACKEND

__all__ = ["kernels", "BACKEND"]
