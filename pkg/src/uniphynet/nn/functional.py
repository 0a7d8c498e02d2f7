"""Differentiable operations used by UniPhyNet.

Each op computes its forward with numpy (or the compiled kernels) and attaches
an explicit backward. Shapes follow the (batch, channels, time) convention.
"""
import logging

import numpy as np

from .. import kernels
from .tensor import ShapeError, accumulate, concat, make, note_kink

log = logging.getLogger(__name__)


def _pads(padding, k):
    if padding == "same":
        # odd k: k//2 on both sides; even k: one fewer on the left
        return (k - 1) // 2, k // 2
    if isinstance(padding, (tuple, list)):
        return int(padding[0]), int(padding[1])
    return int(padding), int(padding)


def conv_out_length(length, k, stride=1, padding=0):
    left, right = _pads(padding, k)
    return (length + left + right - k) // stride + 1


def conv1d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Cross-correlation over time.

    ``padding`` is an int (both sides), a ``(left, right)`` pair or ``"same"``.
    ``groups`` is 1 (dense) or the channel count (depthwise, weight ``(C, 1, k)``).
    """
    if x.ndim != 3:
        raise ShapeError(f"conv1d expects (B, Cin, L), got {x.shape}")
    cout, cin_g, k = weight.shape
    cin = x.shape[1]
    if groups == 1:
        if cin_g != cin:
            raise ShapeError(f"conv1d: input has {cin} channels, weight expects {cin_g}")
        fwd, bwd = kernels.conv1d_forward, kernels.conv1d_backward
    elif groups == cin and cin_g == 1 and cout == cin:
        fwd, bwd = kernels.depthwise_forward, kernels.depthwise_backward
    else:
        raise ShapeError(f"conv1d: unsupported groups={groups} for weight {weight.shape}")
    left, right = _pads(padding, k)
    if x.shape[2] + left + right < k:
        raise ShapeError(f"conv1d: input length {x.shape[2]} too short for kernel {k}")
    out = fwd(x.data, weight.data, stride, left, right)
    if bias is not None:
        out += bias.data[None, :, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if x.requires_grad or weight.requires_grad:
            gx, gw = bwd(x.data, weight.data, g, stride, left, right)
            accumulate(x, gx)
            accumulate(weight, gw)
        if bias is not None:
            accumulate(bias, g.sum(axis=(0, 2)))

    return make(out, parents, backward)


def batchnorm1d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch normalization over (batch, time) per channel.

    ``running_mean``/``running_var`` are numpy arrays updated in place in
    training mode (variance update uses the unbiased estimate).
    """
    xd = x.data
    c = xd.shape[1]
    if training:
        n = xd.shape[0] * xd.shape[2]
        if n < 2:
            raise ShapeError("batchnorm1d in training mode needs at least 2 values per channel")
        mu = xd.mean(axis=(0, 2))
        xc = xd - mu[None, :, None]
        var = (xc * xc).mean(axis=(0, 2))
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = xc * invstd[None, :, None]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
    else:
        invstd = (1.0 / np.sqrt(running_var + eps)).astype(xd.dtype)
        xhat = (xd - running_mean[None, :, None].astype(xd.dtype)) * invstd[None, :, None]
    out = gamma.data.reshape(1, c, 1) * xhat + beta.data.reshape(1, c, 1)

    def backward(g):
        accumulate(gamma, (g * xhat).sum(axis=(0, 2)))
        accumulate(beta, g.sum(axis=(0, 2)))
        if not x.requires_grad:
            return
        gxhat = g * gamma.data.reshape(1, c, 1)
        if training:
            n = xd.shape[0] * xd.shape[2]
            s1 = gxhat.sum(axis=(0, 2), keepdims=True)
            s2 = (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
            gx = (invstd[None, :, None] / n) * (n * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * invstd[None, :, None]
        accumulate(x, gx)

    return make(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward)


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    s = _sigmoid(x.data)

    def backward(g):
        accumulate(x, g * s * (1.0 - s))

    return make(s, (x,), backward)


def tanh(x):
    t = np.tanh(x.data)

    def backward(g):
        accumulate(x, g * (1.0 - t * t))

    return make(t, (x,), backward)


def relu(x):
    mask = x.data > 0
    note_kink(mask)

    def backward(g):
        accumulate(x, g * mask)

    return make(x.data * mask, (x,), backward)


def silu(x):
    s = _sigmoid(x.data)

    def backward(g):
        accumulate(x, g * (s * (1.0 + x.data * (1.0 - s))))

    return make(x.data * s, (x,), backward)


ACTIVATIONS = {"silu": silu, "relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(kind, x):
    try:
        fn = ACTIVATIONS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def _max_along(x, axis):
    idx = np.argmax(x.data, axis=axis)  # first maximum in scan order
    note_kink(idx)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        accumulate(x, full)

    return idx, out, backward


def global_avg_time(x):
    """(B, C, L) -> (B, C)."""
    length = x.shape[2]

    def backward(g):
        accumulate(x, np.broadcast_to(g[:, :, None] / length, x.shape))

    return make(x.data.mean(axis=2), (x,), backward)


def global_max_time(x):
    """(B, C, L) -> (B, C)."""
    _, out, bw = _max_along(x, 2)
    return make(out[:, :, 0], (x,), lambda g: bw(g[:, :, None]))


def avg_over_channels(x):
    """(B, C, L) -> (B, 1, L)."""
    c = x.shape[1]

    def backward(g):
        accumulate(x, np.broadcast_to(g / c, x.shape))

    return make(x.data.mean(axis=1, keepdims=True), (x,), backward)


def max_over_channels(x):
    """(B, C, L) -> (B, 1, L)."""
    _, out, bw = _max_along(x, 1)
    return make(out, (x,), bw)


POOLS = {
    "global_avg_time": global_avg_time,
    "global_max_time": global_max_time,
    "avg_over_channels": avg_over_channels,
    "max_over_channels": max_over_channels,
}


def pool(x, kind):
    return POOLS[kind](x)


def linear(x, weight, bias=None):
    """y = x W^T + b for x of shape (..., n) and W of shape (m, n)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight columns {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if x.requires_grad:
            accumulate(x, g @ weight.data)
        g2 = g.reshape(-1, g.shape[-1])
        accumulate(weight, g2.T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None:
            accumulate(bias, g2.sum(axis=0))

    return make(out, parents, backward)


def _gru_forward(xp, wh, reverse):
    """One GRU direction given precomputed input projections.

    xp: (B, L, 3H) holding W x + b for gates (z, r, candidate) in that order.
    wh: (3H, H) recurrent matrices U_z, U_r, U_h stacked.
    """
    b, length, h3 = xp.shape
    hdim = h3 // 3
    uz, ur, uh = wh[:hdim], wh[hdim:2 * hdim], wh[2 * hdim:]
    h = np.zeros((b, hdim), dtype=xp.dtype)
    outs = np.empty((b, length, hdim), dtype=xp.dtype)
    cache = []
    steps = range(length - 1, -1, -1) if reverse else range(length)
    for t in steps:
        z = _sigmoid(xp[:, t, :hdim] + h @ uz.T)
        r = _sigmoid(xp[:, t, hdim:2 * hdim] + h @ ur.T)
        rh = r * h
        cand = np.tanh(xp[:, t, 2 * hdim:] + rh @ uh.T)
        h_new = (1.0 - z) * h + z * cand
        cache.append((t, h, z, r, rh, cand))
        outs[:, t] = h_new
        h = h_new
    return outs, cache


def _gru_backward(gouts, wh, cache):
    b, length, hdim = gouts.shape
    uz, ur, uh = wh[:hdim], wh[hdim:2 * hdim], wh[2 * hdim:]
    gxp = np.zeros((b, length, 3 * hdim), dtype=gouts.dtype)
    gwh = np.zeros_like(wh)
    dh_next = np.zeros((b, hdim), dtype=gouts.dtype)
    for t, h_prev, z, r, rh, cand in reversed(cache):
        dh = gouts[:, t] + dh_next
        dz = dh * (cand - h_prev)
        dcand = dh * z
        dh_prev = dh * (1.0 - z)
        da_h = dcand * (1.0 - cand * cand)
        gwh[2 * hdim:] += da_h.T @ rh
        drh = da_h @ uh
        dr = drh * h_prev
        dh_prev += drh * r
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        gwh[:hdim] += da_z.T @ h_prev
        gwh[hdim:2 * hdim] += da_r.T @ h_prev
        dh_prev += da_z @ uz + da_r @ ur
        gxp[:, t, :hdim] = da_z
        gxp[:, t, hdim:2 * hdim] = da_r
        gxp[:, t, 2 * hdim:] = da_h
        dh_next = dh_prev
    return gxp, gwh


def bigru(x, fwd_params, bwd_params):
    """Bidirectional single-layer GRU with zero initial state.

    Args:
        x: (B, L, n) tensor.
        fwd_params, bwd_params: ``(W_x (3H, n), W_h (3H, H), b (3H,))`` per
            direction, gate blocks ordered update, reset, candidate.

    Returns:
        (B, L, 2H) tensor: forward states in ``[..., :H]``, backward states in
        ``[..., H:]``, both indexed by input time step.
    """
    if x.ndim != 3 or x.shape[1] < 1:
        raise ShapeError(f"bigru expects (B, L>=1, n), got {x.shape}")
    results = []
    for params, reverse in ((fwd_params, False), (bwd_params, True)):
        wx, wh, bias = params
        if wx.shape[1] != x.shape[2]:
            raise ShapeError(f"bigru: input width {x.shape[2]} != W_x columns {wx.shape[1]}")
        xp = x.data @ wx.data.T + bias.data
        outs, cache = _gru_forward(xp, wh.data, reverse)
        results.append((outs, cache))
    hdim = fwd_params[1].shape[1]
    out = np.concatenate([results[0][0], results[1][0]], axis=2)
    parents = (x,) + tuple(fwd_params) + tuple(bwd_params)

    def backward(g):
        gx = np.zeros_like(x.data)
        for k, params in enumerate((fwd_params, bwd_params)):
            wx, wh, bias = params
            gxp, gwh = _gru_backward(np.ascontiguousarray(g[:, :, k * hdim:(k + 1) * hdim]), wh.data, results[k][1])
            flat = gxp.reshape(-1, gxp.shape[2])
            accumulate(wx, flat.T @ x.data.reshape(-1, x.shape[2]))
            accumulate(wh, gwh)
            accumulate(bias, flat.sum(axis=0))
            gx += gxp @ wx.data
        accumulate(x, gx)

    return make(out, parents, backward)


def bigru_final(outputs):
    """Concatenate the forward state at the last step and the backward state at the first."""
    hdim = outputs.shape[2] // 2
    return concat([outputs[:, -1, :hdim], outputs[:, 0, hdim:]], axis=1)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        accumulate(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return make(s, (x,), backward)


class ValidationError(ValueError):
    pass


def softmax_cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    targets = np.asarray(targets)
    b, c = logits.shape
    if targets.shape != (b,):
        raise ShapeError(f"targets shape {targets.shape} does not match batch {b}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValidationError(f"targets must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(b), targets] - logsum
    loss = np.asarray(-logp.mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - logsum[:, None])
        p[np.arange(b), targets] -= 1.0
        accumulate(logits, p * (g / b))

    return make(loss, (logits,), backward)


def dropout(x, p, rng, training):
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def backward(g):
        accumulate(x, g * keep)

    return make(x.data * keep, (x,), backward)


def scale_channels(y, a):
    """y (B, C, L) times per-channel weights a (B, C)."""
    def backward(g):
        accumulate(y, g * a.data[:, :, None])
        accumulate(a, (g * y.data).sum(axis=2))

    return make(y.data * a.data[:, :, None], (y, a), backward)


def scale_time(y, s):
    """y (B, C, L) times per-step weights s (B, 1, L)."""
    def backward(g):
        accumulate(y, g * s.data)
        accumulate(s, (g * y.data).sum(axis=1, keepdims=True))

    return make(y.data * s.data, (y, s), backward)
