"""Backend selection for the numeric kernels.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback is loaded. Set ``D2DFL_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

_backend = _pykernels
BACKEND = "python"

if os.environ.get("D2DFL_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _backend = _ckernels
        BACKEND = "cython"

lloyd = _backend.lloyd
project = _backend.project
objective = _backend.objective
pgd_solve = _backend.pgd_solve


def backend_name() -> str:
    return BACKEND


def get_backend(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels  # type: ignore[attr-defined]

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


__all__ = ["lloyd", "project", "objective", "pgd_solve", "backend_name", "get_backend", "BACKEND"]
