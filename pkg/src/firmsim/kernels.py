"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting ``FIRMSIM_PURE=1``
forces the numpy fallback.
"""

import os

from . import _pykernels

try:
    if os.environ.get("FIRMSIM_PURE", "") not in ("", "0"):
        raise ImportError("pure backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

scatter_offsets = _impl.scatter_offsets
best_cell = _impl.best_cell
