"""Kernel backend selection.

The compiled ``_core`` extension is used when importable; otherwise the
numpy fallback.  Setting ``OVMORPH_KERNELS=python`` forces the fallback.
Both expose ``best_split``, ``apply_tree`` and ``contour_steps``.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("OVMORPH_KERNELS", "").lower() not in ("python", "fallback"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

best_split = _impl.best_split
apply_tree = _impl.apply_tree
contour_steps = _impl.contour_steps


def backends():
    """Mapping of every importable backend name to its module."""
    found = {"python": _fallback}
    try:
        from . import _core

        found["cython"] = _core
    except ImportError:
        pass
    return found
