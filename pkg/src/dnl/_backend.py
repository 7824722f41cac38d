"""Select the kernel implementation at import time.

The compiled extension is preferred; set ``DNL_PURE_PYTHON=1`` to force the
numpy fallback.
"""

from __future__ import annotations

import importlib
import os

from . import _kernels_py


def load(name: str):
    """Return the kernel module named ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        return importlib.import_module("dnl._kernels")
    raise ValueError(f"unknown backend {name!r}")


def available() -> list[str]:
    names = ["python"]
    try:
        load("compiled")
    except ImportError:
        pass
    else:
        names.insert(0, "compiled")
    return names


if os.environ.get("DNL_PURE_PYTHON"):
    impl = _kernels_py
    BACKEND = "python"
else:
    try:
        impl = load("compiled")
        BACKEND = "compiled"
    except ImportError:
        impl = _kernels_py
        BACKEND = "python"

transform_rows = impl.transform_rows
history_sum = impl.history_sum
spectral_norms = impl.spectral_norms
