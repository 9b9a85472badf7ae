"""Kernel dispatch: numba-accelerated hot loops with a pure numpy/scipy fallback.

The active path is chosen once at import time from the ``TUMORSEG_ACCEL``
environment variable:

* ``auto`` (default) - use numba if it imports, else fall back to numpy.
* ``numba``          - require numba; raise if unavailable.
* ``numpy``          - force the numpy/scipy fallback.

Both paths implement the same functions with identical semantics, including
component numbering (components are labeled 1..K in raster order of first
occurrence), so pipeline outputs are byte-identical across paths.
"""

import os

from . import kernels_numpy

_MODE = os.environ.get("TUMORSEG_ACCEL", "auto").lower()
if _MODE not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"TUMORSEG_ACCEL must be one of auto/numba/numpy, got {_MODE!r}"
    )

if _MODE in ("auto", "numba"):
    try:
        from . import kernels_numba as _impl
        BACKEND = "numba"
    except ImportError:
        if _MODE == "numba":
            raise
        _impl = kernels_numpy
        BACKEND = "numpy"
else:
    _impl = kernels_numpy
    BACKEND = "numpy"

label_components = _impl.label_components
component_stats = _impl.component_stats
feature_edt = _impl.feature_edt
masked_mean_std = _impl.masked_mean_std
zscore_channels = _impl.zscore_channels


def backend_name() -> str:
    """Name of the active kernel path ("numba" or "numpy")."""
    return BACKEND
