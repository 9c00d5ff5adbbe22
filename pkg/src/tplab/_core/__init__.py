"""Stepping kernel backends.

The compiled Cython kernel is preferred; the pure-Python twin is selected
when the extension is unavailable or when TPLAB_PURE=1 is set. Both
implement the same contract and produce bitwise-identical results.
"""

from __future__ import annotations

import os

from . import descriptors  # noqa: F401  (re-exported data contract)
from . import pykernel

_FORCE_PURE = os.environ.get("TPLAB_PURE", "").strip().lower() in ("1", "true", "yes")

if _FORCE_PURE:
    kernels = pykernel
else:
    try:
        from . import _ck as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = pykernel

BACKEND = kernels.BACKEND


def get_backend(name: str):
    """Fetch a kernel module by name ("python" or "compiled"); for
    benchmarks and parity tests."""
    if name == "python":
        return pykernel
    if name == "compiled":
        from . import _ck

        return _ck
    raise ValueError("unknown backend %r" % (name,))


def available_backends() -> list[str]:
    out = ["python"]
    try:
        from . import _ck  # noqa: F401

        out.append("compiled")
    except ImportError:
        pass
    return out
