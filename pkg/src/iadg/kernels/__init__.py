"""Convolution kernel backends.

The compiled Cython extension is preferred; the pure-numpy fallback is used
when it is missing or when ``IADG_BACKEND=python`` is set.  Both backends
accumulate taps in the same order, so forward results are bit-identical.
"""

import os

_forced = os.environ.get("IADG_BACKEND", "").lower()
if _forced not in ("", "cython", "python"):
    raise ValueError(f"IADG_BACKEND must be 'cython' or 'python', got {_forced!r}")

if _forced == "python":
    from . import python_backend as _impl

    BACKEND = "python"
else:
    try:
        from . import _conv as _impl

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        from . import python_backend as _impl

        BACKEND = "python"

conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd = _impl.conv2d_bwd
dwconv_fwd = _impl.dwconv_fwd
dwconv_bwd = _impl.dwconv_bwd
