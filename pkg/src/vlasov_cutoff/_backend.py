"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise (or when
``VLASOV_CUTOFF_PURE_PYTHON=1`` is set) the NumPy fallback is used. Both
expose the same functions.
"""

import logging
import os

logger = logging.getLogger(__name__)

from . import _fallback as fallback

compiled = None
if not os.environ.get("VLASOV_CUTOFF_PURE_PYTHON"):
    try:
        from . import _core as compiled
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable; using NumPy fallback")
        compiled = None

kernels = compiled if compiled is not None else fallback
NAME = "compiled" if compiled is not None else "numpy"


def get(name=None):
    """Return a kernel module by name (``"compiled"``, ``"numpy"`` or default)."""
    if name is None:
        return kernels
    if name == "numpy":
        return fallback
    if name == "compiled":
        if compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return compiled
    raise ValueError(f"unknown backend {name!r}")
