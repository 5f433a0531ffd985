"""Select the kernel implementation at import time.

The compiled ``malgray._kernels`` extension is preferred; the numpy module
``malgray._pykernels`` is used when it is not built or when the environment
variable ``MALGRAY_PURE_PYTHON`` is set to a non-empty value other than 0.
"""

import importlib
import os

from . import _pykernels

KERNEL_NAMES = ("im2col", "col2im", "maxpool_forward", "maxpool_backward", "resize_bilinear")


def _load():
    if os.environ.get("MALGRAY_PURE_PYTHON", "") not in ("", "0"):
        return _pykernels, "python"
    try:
        mod = importlib.import_module("malgray._kernels")
    except ImportError:
        return _pykernels, "python"
    return mod, "cython"


kernels, BACKEND = _load()


def get(name: str):
    """Return a kernel module by name (``"cython"`` or ``"python"``)."""
    if name == "python":
        return _pykernels
    if name == "cython":
        return importlib.import_module("malgray._kernels")
    raise ValueError(name)
