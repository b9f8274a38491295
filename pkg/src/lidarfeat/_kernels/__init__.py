"""Per-pixel kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it was built; set ``LIDARFEAT_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

if os.environ.get("LIDARFEAT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

nms_mask = _impl.nms_mask
scatter_nearest = _impl.scatter_nearest
masked_bilinear = _impl.masked_bilinear


def available_backends():
    """Map of backend name to module, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
