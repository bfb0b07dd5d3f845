"""Backend selection for the convolution hot loops.

The compiled extension is used when importable; set ``GANFORENSICS_BACKEND=python``
to force the numpy fallback. Both backends produce bit-identical results.
"""

import os

from . import _pykernels

BACKEND = "python"
im2col = _pykernels.im2col
col2im = _pykernels.col2im

if os.environ.get("GANFORENSICS_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels
    except ImportError:
        _ckernels = None
    if _ckernels is not None:
        BACKEND = "cython"
        im2col = _ckernels.im2col
        col2im = _ckernels.col2im


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return ``(im2col, col2im)`` for a named backend."""
    if name == "python":
        return _pykernels.im2col, _pykernels.col2im
    if name == "cython":
        from . import _ckernels
        return _ckernels.im2col, _ckernels.col2im
    raise ValueError(f"unknown backend {name!r}")
