"""Kernel backend selection.

Imports the compiled core when it was built, otherwise the NumPy fallback.
``SKDLAB_PURE=1`` forces the fallback (used by the benchmark and by tests
that compare both backends).
"""

import os

from . import fallback

if os.environ.get("SKDLAB_PURE") == "1":
    _impl = fallback
    BACKEND = "fallback"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = fallback
        BACKEND = "fallback"

mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward


def available_backends():
    """Name -> module for every importable backend."""
    out = {"fallback": fallback}
    try:
        from . import _core

        out["compiled"] = _core
    except ImportError:
        pass
    return out
