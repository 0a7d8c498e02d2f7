"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_kernels.pyx`` mirrors every function
here with the same signature and semantics.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def sosfilt(sos, x, zi):
    """Run a biquad cascade (transposed direct form II) along the last axis.

    Args:
        sos: (n_sections, 6) coefficients ``b0 b1 b2 1 a1 a2``.
        x: (rows, n) float64 signal, filtered row-wise.
        zi: (n_sections, rows, 2) float64 initial state, updated in place.

    Returns:
        Filtered (rows, n) array.
    """
    y = np.array(x, dtype=np.float64, copy=True)
    n = y.shape[1]
    for s in range(sos.shape[0]):
        b0, b1, b2, _, a1, a2 = (float(v) for v in sos[s])
        z1 = zi[s, :, 0].copy()
        z2 = zi[s, :, 1].copy()
        for i in range(n):
            xi = y[:, i]
            yi = b0 * xi + z1
            z1 = b1 * xi - a1 * yi + z2
            z2 = b2 * xi - a2 * yi
            y[:, i] = yi
        zi[s, :, 0] = z1
        zi[s, :, 1] = z2
    return y


def _pad(x, pad_left, pad_right):
    if pad_left == 0 and pad_right == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad_left, pad_right)))


def _cols(x, k, stride, pad_left, pad_right):
    xp = _pad(x, pad_left, pad_right)
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]  # (B, Cin, L', k)
    return win


def conv1d_forward(x, w, stride, pad_left, pad_right):
    """Dense cross-correlation. x (B,Cin,L), w (Cout,Cin,k) -> (B,Cout,L')."""
    cout, cin, k = w.shape
    win = _cols(x, k, stride, pad_left, pad_right)
    b, _, lout, _ = win.shape
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * lout, cin * k)
    out = cols @ w.reshape(cout, cin * k).T
    return np.ascontiguousarray(out.reshape(b, lout, cout).transpose(0, 2, 1))


def conv1d_backward(x, w, gout, stride, pad_left, pad_right):
    """Gradients of the dense cross-correlation w.r.t. input and weight."""
    cout, cin, k = w.shape
    b, _, length = x.shape
    lout = gout.shape[2]
    win = _cols(x, k, stride, pad_left, pad_right)
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * lout, cin * k)
    g2 = np.ascontiguousarray(gout.transpose(0, 2, 1)).reshape(b * lout, cout)
    gw = (g2.T @ cols).reshape(cout, cin, k)
    gcols = (g2 @ w.reshape(cout, cin * k)).reshape(b, lout, cin, k)
    gxp = np.zeros((b, cin, length + pad_left + pad_right), dtype=x.dtype)
    span = stride * (lout - 1) + 1
    for j in range(k):
        gxp[:, :, j:j + span:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
    gx = gxp[:, :, pad_left:pad_left + length]
    return np.ascontiguousarray(gx), gw


def depthwise_forward(x, w, stride, pad_left, pad_right):
    """Per-channel cross-correlation. x (B,C,L), w (C,1,k) -> (B,C,L')."""
    k = w.shape[2]
    win = _cols(x, k, stride, pad_left, pad_right)
    return np.einsum("bclk,ck->bcl", win, w[:, 0, :])


def depthwise_backward(x, w, gout, stride, pad_left, pad_right):
    k = w.shape[2]
    b, c, length = x.shape
    lout = gout.shape[2]
    win = _cols(x, k, stride, pad_left, pad_right)
    gw = np.einsum("bcl,bclk->ck", gout, win)[:, None, :]
    gxp = np.zeros((b, c, length + pad_left + pad_right), dtype=x.dtype)
    span = stride * (lout - 1) + 1
    for j in range(k):
        gxp[:, :, j:j + span:stride] += gout * w[None, :, 0, j, None]
    return np.ascontiguousarray(gxp[:, :, pad_left:pad_left + length]), gw
