"""Kernel dispatch: compiled Cython core when importable, numpy fallback otherwise.

Set ``UNIPHYNET_KERNELS=python`` to force the fallback.
"""
import logging
import os

import numpy as np

from . import _fallback

log = logging.getLogger(__name__)

BACKEND = "python"
_impl = _fallback

if os.environ.get("UNIPHYNET_KERNELS", "auto").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using numpy fallback")
    else:
        _impl = _compiled
        BACKEND = "cython"


def backend_module(name):
    """Return the kernel module for ``name`` ('cython' or 'python')."""
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a)


def sosfilt(sos, x, zi):
    return _impl.sosfilt(_c(np.asarray(sos, dtype=np.float64)), _c(np.asarray(x, dtype=np.float64)), zi)


# Above this reduction width (Cin * k) the im2col + GEMM path beats the direct
# compiled loop; see benchmarks/bench_kernels.py.
GEMM_MIN_REDUCTION = 40


def _dense(w):
    if _impl is _fallback or w.shape[1] * w.shape[2] >= GEMM_MIN_REDUCTION:
        return _fallback
    return _impl


def conv1d_forward(x, w, stride, pad_left, pad_right):
    return _dense(w).conv1d_forward(_c(x), _c(w), stride, pad_left, pad_right)


def conv1d_backward(x, w, gout, stride, pad_left, pad_right):
    return _dense(w).conv1d_backward(_c(x), _c(w), _c(gout), stride, pad_left, pad_right)


def depthwise_forward(x, w, stride, pad_left, pad_right):
    return _impl.depthwise_forward(_c(x), _c(w), stride, pad_left, pad_right)


def depthwise_backward(x, w, gout, stride, pad_left, pad_right):
    return _impl.depthwise_backward(_c(x), _c(w), _c(gout), stride, pad_left, pad_right)
