"""Depthwise-conv backend selection.

Prefers the compiled Cython kernels when the extension built; falls back
to the pure-numpy implementation otherwise. Set PRMIM_CONV_BACKEND=numpy
to force the fallback (used by the benchmark and for debugging).
"""

import os

import numpy as np

from . import _conv_numpy

_FORCED = os.environ.get("PRMIM_CONV_BACKEND", "").lower()

if _FORCED == "numpy":
    _impl = _conv_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _conv_cy as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _conv_numpy
        BACKEND = "numpy"


def conv_forward(x, kernel, bias):
    x = np.ascontiguousarray(x)
    kernel = np.ascontiguousarray(kernel)
    bias = np.ascontiguousarray(bias)
    return np.asarray(_impl.conv_forward(x, kernel, bias))


def conv_backward(x, kernel, gout):
    x = np.ascontiguousarray(x)
    kernel = np.ascontiguousarray(kernel)
    gout = np.ascontiguousarray(gout)
    gx, gk, gb = _impl.conv_backward(x, kernel, gout)
    return np.asarray(gx), np.asarray(gk), np.asarray(gb)
