"""Stencil kernel backends.

The compiled Cython extension ``_core`` is used when available; otherwise the
numpy ``_fallback`` provides identical semantics. Selection happens once at
import and can be forced with the ``ATMOTOMO_KERNELS`` environment variable:

* ``auto`` (default): compiled if built, else fallback
* ``compiled``: require the extension, raise if missing
* ``python``: force the numpy fallback

``BACKEND`` names the active implementation.
"""

import os

from . import _fallback

_CHOICES = ("auto", "compiled", "python")


def _select(requested):
    if requested not in _CHOICES:
        raise ValueError(
            "ATMOTOMO_KERNELS must be one of %s, got %r"
            % ("/".join(_CHOICES), requested)
        )
    if requested == "python":
        return _fallback, "python"
    try:
        from . import _core
    except ImportError:
        if requested == "compiled":
            raise ImportError(
                "ATMOTOMO_KERNELS=compiled but atmotomo.kernels._core is "
                "not built; reinstall with a working C compiler"
            )
        return _fallback, "python"
    return _core, "compiled"


_impl, BACKEND = _select(os.environ.get("ATMOTOMO_KERNELS", "auto").lower())

gather_add = _impl.gather_add
scatter_add = _impl.scatter_add

__all__ = ["gather_add", "scatter_add", "BACKEND"]
