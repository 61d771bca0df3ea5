"""Backend selection: compiled core when available, pure Python otherwise.

Set POTLATCH_PURE_PYTHON=1 to force the fallback (used by the benchmark
and the cross-backend parity tests).
"""

import os

if os.environ.get("POTLATCH_PURE_PYTHON"):
    from . import _core_py as core
else:
    try:
        from . import _core as core  # type: ignore[attr-defined]
    except ImportError:
        from . import _core_py as core

BACKEND = core.BACKEND_NAME


def get_core(pure_python: bool = False):
    """Return the active core module, or the pure-Python one on request."""
    if pure_python:
        from . import _core_py

        return _core_py
    return core
