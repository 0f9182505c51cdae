"""Kernel lane selection.

The compiled Cython extension (`sheetview.kernels._core`) is preferred when
importable; otherwise the pure-numpy fallback is used. Both lanes implement
the contract documented in `pure.py` and agree bit-for-bit.

Override with the SHEETVIEW_KERNELS environment variable:
    auto (default) | compiled (error if unavailable) | pure
"""

import os

from . import pure

_requested = os.environ.get("SHEETVIEW_KERNELS", "auto").lower()
_impl = None
if _requested in ("auto", "compiled"):
    try:
        from . import _core as _impl  # noqa: F401
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "SHEETVIEW_KERNELS=compiled but the extension is not built; "
                "run `pip install -e . --no-build-isolation`"
            )
        _impl = None
if _impl is None:
    _impl = pure

LANE = "pure" if _impl is pure else "compiled"


def _c(a):
    import numpy as np

    return np.ascontiguousarray(a, dtype=np.float64)


def raster_select(xn, yn, z, faces, face_ids, width, height, k, blur,
                  row0, row1, out_face):
    _impl.raster_select(_c(xn), _c(yn), _c(z), faces, face_ids,
                        width, height, k, blur, row0, row1, out_face)


def splat_forward(values, u, v, height, width):
    return _impl.splat_forward(_c(values), _c(u), _c(v), height, width)


def splat_backward(values, u, v, grad_out):
    return _impl.splat_backward(_c(values), _c(u), _c(v), _c(grad_out))


def sample_forward(tex, u, v):
    return _impl.sample_forward(_c(tex), _c(u), _c(v))


def sample_backward(tex, u, v, grad_out):
    return _impl.sample_backward(_c(tex), _c(u), _c(v), _c(grad_out))
