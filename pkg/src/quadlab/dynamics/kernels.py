"""Step-kernel backend selection.

The compiled extension is used when importable; ``QUADLAB_KERNEL=python``
forces the pure-Python fallback.
"""
from __future__ import annotations

import os

from . import _step_py

python_kernel = _step_py

try:
    from . import _step as compiled_kernel
except ImportError:  # extension not built
    compiled_kernel = None

if compiled_kernel is not None and os.environ.get("QUADLAB_KERNEL", "").lower() != "python":
    backend = compiled_kernel
    BACKEND = "compiled"
else:
    backend = python_kernel
    BACKEND = "python"


def get(name: str | None = None):
    """Return the kernel module named ``compiled`` or ``python`` (default: active).
    Any object exposing ``step_forward``/``step_vjp`` is passed through."""
    if name is None:
        return backend
    if hasattr(name, "step_forward") and hasattr(name, "step_vjp"):
        return name
    if name == "python":
        return python_kernel
    if name == "compiled":
        if compiled_kernel is None:
            raise ImportError("compiled step kernel is not built")
        return compiled_kernel
    raise ValueError(f"unknown kernel {name!r}")
