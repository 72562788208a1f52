"""Kernel backend selection.

The compiled Cython kernel is used when the extension built; otherwise the
numpy implementation takes over.  GPIMDP_BACKEND=python forces the fallback,
GPIMDP_BACKEND=compiled makes a missing extension a hard error (useful in
benchmarks and CI).
"""

import os

_requested = os.environ.get("GPIMDP_BACKEND", "")

if _requested == "python":
    from . import _core_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        from . import _core_py as _impl

        BACKEND = "python"

extremal_rows = _impl.extremal_rows


def backend_name() -> str:
    return BACKEND
