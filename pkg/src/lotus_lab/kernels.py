"""Kernel backend selection.

The compiled extension ``lotus_lab._kernels`` is used when it was built;
otherwise the numpy fallback in ``lotus_lab._kernels_py`` is used.  Setting
``LOTUS_LAB_KERNELS=python`` forces the fallback even if the extension exists.
"""

import importlib
import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

_NAMES = (
    "mlp_forward",
    "mlp_backward",
    "adamw_update",
    "log_softmax_rows",
    "softmax_rows",
    "gumbel_softmax_rows",
    "jsd_rows",
)


def load_backend(name=None):
    """Return the kernel module for ``name`` ('compiled', 'python' or None=auto)."""
    if name is None:
        name = os.environ.get("LOTUS_LAB_KERNELS", "auto")
    if name == "python":
        return _kernels_py
    try:
        return importlib.import_module("lotus_lab._kernels")
    except ImportError:
        if name == "compiled":
            raise
        logger.debug("compiled kernels unavailable, using numpy fallback")
        return _kernels_py


def use_backend(name=None):
    """Rebind the kernel functions of this module; returns the active backend name.

    Callers reach kernels through ``kernels.<name>`` attribute lookups, so a
    switch takes effect for every later call.
    """
    mod = load_backend(name)
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(mod, fn)
    g["BACKEND"] = mod.BACKEND
    return mod.BACKEND


def compiled_available():
    try:
        importlib.import_module("lotus_lab._kernels")
    except ImportError:
        return False
    return True


BACKEND = use_backend()

__all__ = ["BACKEND", "compiled_available", "load_backend", "use_backend", *_NAMES]
