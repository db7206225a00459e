"""Closest-point kernels: compiled core when built, numpy fallback otherwise.

``BACKEND`` names the implementation picked at import. Set
``VOXSYNTH_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

fallback = _fallback

if os.environ.get("VOXSYNTH_PURE_PYTHON") == "1":
    _core = None
else:
    try:
        from . import _bvh as _core
    except ImportError:  # extension not built
        _core = None

compiled = _core
BACKEND = "cython" if _core is not None else "python"
_impl = _core if _core is not None else _fallback

brute_closest = _impl.brute_closest
bvh_closest = _impl.bvh_closest
