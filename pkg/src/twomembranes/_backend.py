"""Kernel backend selection.

Set ``TWOMEMBRANES_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels; they are also used when numba cannot be imported.
"""

import logging
import os

log = logging.getLogger(__name__)

DISABLE_NUMBA = os.environ.get("TWOMEMBRANES_DISABLE_NUMBA", "").strip().lower() in (
    "1", "true", "yes", "on")

if DISABLE_NUMBA:
    from . import _kernels_numpy as kernels
else:
    try:
        from . import _kernels_numba as kernels
    except ImportError:  # pragma: no cover - numba is a declared dependency
        log.warning("numba unavailable, falling back to numpy kernels")
        from . import _kernels_numpy as kernels

BACKEND = kernels.NAME
