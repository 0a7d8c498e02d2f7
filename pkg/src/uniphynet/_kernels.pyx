# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: biquad cascade filtering and 1D convolution.

Signatures and semantics match ``uniphynet._fallback``.
"""
import numpy as np

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _first_out(Py_ssize_t j, Py_ssize_t pad, Py_ssize_t stride) nogil:
    # smallest l >= 0 with l*stride + j - pad >= 0
    cdef Py_ssize_t d = pad - j
    if d <= 0:
        return 0
    return (d + stride - 1) // stride


cdef inline Py_ssize_t _end_out(Py_ssize_t j, Py_ssize_t pad, Py_ssize_t stride,
                                Py_ssize_t length, Py_ssize_t lout) nogil:
    # one past the largest l with l*stride + j - pad <= length - 1
    cdef Py_ssize_t d = length - 1 + pad - j
    cdef Py_ssize_t e
    if d < 0:
        return 0
    e = d // stride + 1
    return e if e < lout else lout


def sosfilt(const double[:, ::1] sos, const double[:, ::1] x, double[:, :, ::1] zi):
    cdef Py_ssize_t ns = sos.shape[0]
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    out = np.array(x, dtype=np.float64, copy=True)
    cdef double[:, ::1] y = out
    cdef Py_ssize_t r, s, i
    cdef double b0, b1, b2, a1, a2, z1, z2, xi, yi
    with nogil:
        for s in range(ns):
            b0 = sos[s, 0]
            b1 = sos[s, 1]
            b2 = sos[s, 2]
            a1 = sos[s, 4]
            a2 = sos[s, 5]
            for r in range(rows):
                z1 = zi[s, r, 0]
                z2 = zi[s, r, 1]
                for i in range(n):
                    xi = y[r, i]
                    yi = b0 * xi + z1
                    z1 = b1 * xi - a1 * yi + z2
                    z2 = b2 * xi - a2 * yi
                    y[r, i] = yi
                zi[s, r, 0] = z1
                zi[s, r, 1] = z2
    return out


def conv1d_forward(const real[:, :, ::1] x, const real[:, :, ::1] w,
                   Py_ssize_t stride, Py_ssize_t pad_left, Py_ssize_t pad_right):
    cdef Py_ssize_t nb = x.shape[0], cin = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t lout = (length + pad_left + pad_right - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((nb, cout, lout), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t b, oc, c, j, l, lo, hi, off
    cdef real wv
    with nogil:
        for b in range(nb):
            for oc in range(cout):
                for c in range(cin):
                    for j in range(k):
                        wv = w[oc, c, j]
                        lo = _first_out(j, pad_left, stride)
                        hi = _end_out(j, pad_left, stride, length, lout)
                        off = j - pad_left
                        if stride == 1:
                            for l in range(lo, hi):
                                o[b, oc, l] += wv * x[b, c, l + off]
                        else:
                            for l in range(lo, hi):
                                o[b, oc, l] += wv * x[b, c, l * stride + off]
    return out


def conv1d_backward(const real[:, :, ::1] x, const real[:, :, ::1] w, const real[:, :, ::1] gout,
                    Py_ssize_t stride, Py_ssize_t pad_left, Py_ssize_t pad_right):
    cdef Py_ssize_t nb = x.shape[0], cin = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t lout = gout.shape[2]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((nb, cin, length), dtype=dtype)
    gw_arr = np.zeros((cout, cin, k), dtype=dtype)
    cdef real[:, :, ::1] gx = gx_arr
    cdef real[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, oc, c, j, l, lo, hi, off
    cdef real wv, acc, gv
    with nogil:
        for b in range(nb):
            for oc in range(cout):
                for c in range(cin):
                    for j in range(k):
                        wv = w[oc, c, j]
                        lo = _first_out(j, pad_left, stride)
                        hi = _end_out(j, pad_left, stride, length, lout)
                        off = j - pad_left
                        acc = 0
                        if stride == 1:
                            for l in range(lo, hi):
                                acc = acc + gout[b, oc, l] * x[b, c, l + off]
                            for l in range(lo, hi):
                                gx[b, c, l + off] += wv * gout[b, oc, l]
                        else:
                            for l in range(lo, hi):
                                gv = gout[b, oc, l]
                                acc = acc + gv * x[b, c, l * stride + off]
                                gx[b, c, l * stride + off] += wv * gv
                        gw[oc, c, j] += acc
    return gx_arr, gw_arr


def depthwise_forward(const real[:, :, ::1] x, const real[:, :, ::1] w,
                      Py_ssize_t stride, Py_ssize_t pad_left, Py_ssize_t pad_right):
    cdef Py_ssize_t nb = x.shape[0], ch = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t k = w.shape[2]
    cdef Py_ssize_t lout = (length + pad_left + pad_right - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((nb, ch, lout), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t b, c, j, l, lo, hi, off
    cdef real wv
    with nogil:
        for b in range(nb):
            for c in range(ch):
                for j in range(k):
                    wv = w[c, 0, j]
                    lo = _first_out(j, pad_left, stride)
                    hi = _end_out(j, pad_left, stride, length, lout)
                    off = j - pad_left
                    for l in range(lo, hi):
                        o[b, c, l] += wv * x[b, c, l * stride + off]
    return out


def depthwise_backward(const real[:, :, ::1] x, const real[:, :, ::1] w, const real[:, :, ::1] gout,
                       Py_ssize_t stride, Py_ssize_t pad_left, Py_ssize_t pad_right):
    cdef Py_ssize_t nb = x.shape[0], ch = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t k = w.shape[2]
    cdef Py_ssize_t lout = gout.shape[2]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((nb, ch, length), dtype=dtype)
    gw_arr = np.zeros((ch, 1, k), dtype=dtype)
    cdef real[:, :, ::1] gx = gx_arr
    cdef real[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, c, j, l, lo, hi, off
    cdef real wv, acc, gv
    with nogil:
        for b in range(nb):
            for c in range(ch):
                for j in range(k):
                    wv = w[c, 0, j]
                    lo = _first_out(j, pad_left, stride)
                    hi = _end_out(j, pad_left, stride, length, lout)
                    off = j - pad_left
                    acc = 0
                    if stride == 1:
                        for l in range(lo, hi):
                            acc = acc + gout[b, c, l] * x[b, c, l + off]
                        for l in range(lo, hi):
                            gx[b, c, l + off] += wv * gout[b, c, l]
                    else:
                        for l in range(lo, hi):
                            gv = gout[b, c, l]
                            acc = acc + gv * x[b, c, l * stride + off]
                            gx[b, c, l * stride + off] += wv * gv
                    gw[c, 0, j] += acc
    return gx_arr, gw_arr
