"""Selects the evidence kernel backend.

The compiled extension (`seroscan._evidence_cy`) and the numpy module
(`seroscan._evidence_py`) export the same functions. By default the compiled
one is used when the build produced it; set SEROSCAN_BACKEND=python or
SEROSCAN_BACKEND=cython to force a choice.
"""

from __future__ import annotations

import os

from . import _evidence_py


def _load(name: str):
    if name == "python":
        return _evidence_py
    if name == "cython":
        from . import _evidence_cy

        return _evidence_cy
    raise ValueError(f"unknown backend {name!r}; expected 'cython' or 'python'")


_choice = os.environ.get("SEROSCAN_BACKEND", "").strip().lower()
if _choice:
    kernels = _load(_choice)
else:
    try:
        kernels = _load("cython")
    except ImportError:
        kernels = _evidence_py


def backend_name() -> str:
    """Name of the active kernel backend ('cython' or 'python')."""
    return kernels.BACKEND_NAME


def get_backend(name: str | None = None):
    """Return a kernel module by name, or the active one when name is None."""
    return kernels if name is None else _load(name)
