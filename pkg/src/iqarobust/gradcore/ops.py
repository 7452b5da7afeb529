"""Primitive operations with forward and vector-Jacobian rules.

Images and feature maps are laid out height x width x channels.  Every op is
a pair of pure functions over numpy arrays; the graph engine in
:mod:`iqarobust.gradcore.graph` owns caching and accumulation.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SOBEL_H = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_V = SOBEL_H.T.copy()

PAD_MODES = {"reflect": "reflect", "zero": "constant", "replicate": "edge"}


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pad_indices(n, pad, mode):
    if pad == 0:
        return np.arange(n)
    if mode == "constant":
        idx = np.full(n + 2 * pad, -1)
        idx[pad:pad + n] = np.arange(n)
        return idx
    if mode == "reflect" and pad >= n:
        raise ValueError(f"reflect padding {pad} needs at least {pad + 1} pixels, got {n}")
    return np.pad(np.arange(n), pad, mode=mode)


def pad2d(x, pad, mode):
    """Pad the two spatial axes; returns the padded array and an index cache."""
    if pad == 0:
        return x, None
    np_mode = PAD_MODES[mode]
    ih = _pad_indices(x.shape[0], pad, np_mode)
    iw = _pad_indices(x.shape[1], pad, np_mode)
    if np_mode == "constant":
        out = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    else:
        out = x[ih][:, iw]
    return out, (ih, iw)


def pad2d_backward(gpad, shape, cache, pad):
    if pad == 0:
        return gpad
    ih, iw = cache
    keep_h = ih >= 0
    keep_w = iw >= 0
    rows = np.zeros((shape[0],) + gpad.shape[1:])
    np.add.at(rows, ih[keep_h], gpad[keep_h])
    out = np.zeros(shape)
    np.add.at(out, (slice(None), iw[keep_w]), rows[:, keep_w])
    return out


class Op:
    """Base op: ``forward`` returns ``(out, cache)``; ``backward`` returns input grads."""

    arity = 1

    @staticmethod
    def forward(ins, attrs):
        raise NotImplementedError

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        raise NotImplementedError

    @staticmethod
    def branch(ins, out, cache, attrs):
        """Which linear piece each element is on, for piecewise ops; ``None`` if smooth."""
        return None


class Add(Op):
    arity = 2

    @staticmethod
    def forward(ins, attrs):
        return ins[0] + ins[1], None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        return unbroadcast(gout, ins[0].shape), unbroadcast(gout, ins[1].shape)


class Sub(Op):
    arity = 2

    @staticmethod
    def forward(ins, attrs):
        return ins[0] - ins[1], None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        return unbroadcast(gout, ins[0].shape), unbroadcast(-gout, ins[1].shape)


class Mul(Op):
    arity = 2

    @staticmethod
    def forward(ins, attrs):
        return ins[0] * ins[1], None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        a, b = ins
        return unbroadcast(gout * b, a.shape), unbroadcast(gout * a, b.shape)


class Div(Op):
    arity = 2

    @staticmethod
    def forward(ins, attrs):
        if np.any(ins[1] == 0):
            raise FloatingPointError("division by zero in graph")
        return ins[0] / ins[1], None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        a, b = ins
        return unbroadcast(gout / b, a.shape), unbroadcast(-gout * out / b, b.shape)


class Scale(Op):
    @staticmethod
    def forward(ins, attrs):
        return ins[0] * attrs["factor"], None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        return (gout * attrs["factor"],)


class Shift(Op):
    @staticmethod
    def forward(ins, attrs):
        return ins[0] + attrs["offset"], None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        return (gout,)


class Square(Op):
    @staticmethod
    def forward(ins, attrs):
        return ins[0] * ins[0], None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        return (2.0 * ins[0] * gout,)


class Sqrt(Op):
    """sqrt(max(x, floor)); the gradient is zero where the floor is active."""

    @staticmethod
    def forward(ins, attrs):
        x = ins[0]
        active = x > attrs["floor"]
        return np.sqrt(np.where(active, x, attrs["floor"])), active

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        return (np.where(cache, 0.5 * gout / out, 0.0),)

    @staticmethod
    def branch(ins, out, cache, attrs):
        return cache


class Relu(Op):
    @staticmethod
    def forward(ins, attrs):
        return np.maximum(ins[0], 0.0), None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        return (np.where(ins[0] > 0.0, gout, 0.0),)

    @staticmethod
    def branch(ins, out, cache, attrs):
        return ins[0] > 0.0


class Sigmoid(Op):
    @staticmethod
    def forward(ins, attrs):
        x = ins[0]
        # split by sign so exp never overflows
        e = np.exp(-np.abs(x))
        return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)), None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        return (gout * out * (1.0 - out),)


class Clamp(Op):
    """Clamp to [lo, hi]; gradient passes strictly inside, zero at and beyond the bounds."""

    @staticmethod
    def forward(ins, attrs):
        x = ins[0]
        lo, hi = attrs["lo"], attrs["hi"]
        return np.clip(x, lo, hi), (x > lo) & (x < hi)

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        return (np.where(cache, gout, 0.0),)

    @staticmethod
    def branch(ins, out, cache, attrs):
        return (ins[0] > attrs["lo"]).astype(np.int8) + (ins[0] >= attrs["hi"])


class Sum(Op):
    @staticmethod
    def forward(ins, attrs):
        return np.asarray(np.sum(ins[0], axis=attrs.get("axis"))), None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        axis = attrs.get("axis")
        x = ins[0]
        if axis is not None:
            gout = np.expand_dims(gout, axis)
        return (np.broadcast_to(gout, x.shape).copy(),)


class Mean(Op):
    @staticmethod
    def forward(ins, attrs):
        return np.asarray(np.mean(ins[0], axis=attrs.get("axis"))), None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        axis = attrs.get("axis")
        x = ins[0]
        count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
        if axis is not None:
            gout = np.expand_dims(gout, axis)
        return (np.broadcast_to(gout / count, x.shape).copy(),)


class Conv2d(Op):
    """2-D cross-correlation. x: (H, W, Cin); w: (kh, kw, Cin, Cout); optional bias (Cout,)."""

    arity = 3

    @staticmethod
    def forward(ins, attrs):
        x, w, b = ins
        stride, pad = attrs["stride"], attrs["padding"]
        kh, kw, cin, _ = w.shape
        if x.ndim != 3 or x.shape[2] != cin:
            raise ValueError(f"conv2d expects (H, W, {cin}) input, got {x.shape}")
        xp, pcache = pad2d(x, pad, attrs["pad_mode"])
        if xp.shape[0] < kh or xp.shape[1] < kw:
            raise ValueError(f"conv2d kernel {kh}x{kw} larger than padded input {xp.shape[:2]}")
        win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
        out = np.einsum("hwcij,ijco->hwo", win, w)
        if b is not None:
            out = out + b
        return out, (xp.shape, pcache, win)

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        x, w, b = ins
        stride, pad = attrs["stride"], attrs["padding"]
        xp_shape, pcache, win = cache
        kh, kw = w.shape[:2]
        ho, wo = gout.shape[:2]
        gw = np.einsum("hwcij,hwo->ijco", win, gout)
        gxp = np.zeros(xp_shape)
        for i in range(kh):
            for j in range(kw):
                gxp[i:i + stride * ho:stride, j:j + stride * wo:stride] += np.einsum(
                    "hwo,co->hwc", gout, w[i, j]
                )
        gx = pad2d_backward(gxp, x.shape, pcache, pad)
        gb = None if b is None else gout.sum(axis=(0, 1))
        return gx, gw, gb


class DepthwiseFilter(Op):
    """Fixed 3x3 kernel applied to every channel independently (Sobel filters)."""

    @staticmethod
    def forward(ins, attrs):
        x = ins[0]
        k = attrs["kernel"]
        xp, pcache = pad2d(x, 1, attrs["pad_mode"])
        win = sliding_window_view(xp, (3, 3), axis=(0, 1))
        return np.einsum("hwcij,ij->hwc", win, k), (xp.shape, pcache)

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        xp_shape, pcache = cache
        k = attrs["kernel"]
        h, w = gout.shape[:2]
        gxp = np.zeros(xp_shape)
        for i in range(3):
            for j in range(3):
                gxp[i:i + h, j:j + w] += gout * k[i, j]
        return (pad2d_backward(gxp, ins[0].shape, pcache, 1),)


def _pool_windows(x, k, stride):
    win = sliding_window_view(x, (k, k), axis=(0, 1))[::stride, ::stride]
    return win  # (Ho, Wo, C, k, k)


class MaxPool(Op):
    @staticmethod
    def forward(ins, attrs):
        x = ins[0]
        k, s = attrs["size"], attrs["stride"]
        win = _pool_windows(x, k, s)
        flat = win.reshape(win.shape[:3] + (k * k,))
        arg = np.argmax(flat, axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return out, arg

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        x = ins[0]
        k, s = attrs["size"], attrs["stride"]
        ho, wo, c = gout.shape
        di, dj = np.divmod(cache, k)
        rows = np.arange(ho)[:, None, None] * s + di
        cols = np.arange(wo)[None, :, None] * s + dj
        chans = np.broadcast_to(np.arange(c), (ho, wo, c))
        gx = np.zeros(x.shape)
        np.add.at(gx, (rows, cols, chans), gout)
        return (gx,)

    @staticmethod
    def branch(ins, out, cache, attrs):
        return cache


class AvgPool(Op):
    @staticmethod
    def forward(ins, attrs):
        k, s = attrs["size"], attrs["stride"]
        win = _pool_windows(ins[0], k, s)
        return win.mean(axis=(-2, -1)), None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        x = ins[0]
        k, s = attrs["size"], attrs["stride"]
        ho, wo = gout.shape[:2]
        gx = np.zeros(x.shape)
        share = gout / (k * k)
        for i in range(k):
            for j in range(k):
                gx[i:i + s * ho:s, j:j + s * wo:s] += share
        return (gx,)


class GlobalAvgPool(Op):
    @staticmethod
    def forward(ins, attrs):
        return ins[0].mean(axis=(0, 1)), None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        h, w, _ = ins[0].shape
        return (np.broadcast_to(gout / (h * w), ins[0].shape).copy(),)


class Affine(Op):
    """y = x @ W + b with x: (n,), W: (n, m), b: (m,) or absent."""

    arity = 3

    @staticmethod
    def forward(ins, attrs):
        x, w, b = ins
        if x.ndim != 1 or x.shape[0] != w.shape[0]:
            raise ValueError(f"affine expects ({w.shape[0]},) input, got {x.shape}")
        out = np.einsum("n,nm->m", x, w)
        if b is not None:
            out = out + b
        return out, None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        x, w, b = ins
        return np.einsum("m,nm->n", gout, w), np.einsum("n,m->nm", x, gout), (None if b is None else gout)


class Crop(Op):
    @staticmethod
    def forward(ins, attrs):
        t, l, h, w = attrs["top"], attrs["left"], attrs["height"], attrs["width"]
        x = ins[0]
        if t + h > x.shape[0] or l + w > x.shape[1]:
            raise ValueError(f"crop {h}x{w} at ({t}, {l}) exceeds input {x.shape[:2]}")
        return x[t:t + h, l:l + w].copy(), None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        t, l = attrs["top"], attrs["left"]
        gx = np.zeros(ins[0].shape)
        gx[t:t + gout.shape[0], l:l + gout.shape[1]] = gout
        return (gx,)


def interpolation_matrix(n_out, n_in):
    """Bilinear (half-pixel centre) resampling weights, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


class Resize(Op):
    @staticmethod
    def forward(ins, attrs):
        x = ins[0]
        rh = interpolation_matrix(attrs["height"], x.shape[0])
        rw = interpolation_matrix(attrs["width"], x.shape[1])
        tmp = np.einsum("ph,hwc->pwc", rh, x)
        return np.einsum("qw,pwc->pqc", rw, tmp), (rh, rw)

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        rh, rw = cache
        tmp = np.einsum("qw,pqc->pwc", rw, gout)
        return (np.einsum("ph,pwc->hwc", rh, tmp),)


class Upsample(Op):
    """Nearest-neighbour upsampling by an integer factor."""

    @staticmethod
    def forward(ins, attrs):
        f = attrs["factor"]
        return np.repeat(np.repeat(ins[0], f, axis=0), f, axis=1), None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        f = attrs["factor"]
        h, w, c = ins[0].shape
        return (gout.reshape(h, f, w, f, c).sum(axis=(1, 3)),)


class Concat(Op):
    """Channel concatenation of two feature maps."""

    arity = 2

    @staticmethod
    def forward(ins, attrs):
        a, b = ins
        if a.shape[:2] != b.shape[:2]:
            raise ValueError(f"concat spatial mismatch {a.shape} vs {b.shape}")
        return np.concatenate([a, b], axis=-1), None

    @staticmethod
    def backward(gout, ins, out, cache, attrs):
        c = ins[0].shape[-1]
        return gout[..., :c], gout[..., c:]


OPS = {
    "add": Add,
    "sub": Sub,
    "mul": Mul,
    "div": Div,
    "scale": Scale,
    "shift": Shift,
    "square": Square,
    "sqrt": Sqrt,
    "relu": Relu,
    "sigmoid": Sigmoid,
    "clamp": Clamp,
    "sum": Sum,
    "mean": Mean,
    "conv2d": Conv2d,
    "depthwise3x3": DepthwiseFilter,
    "maxpool": MaxPool,
    "avgpool": AvgPool,
    "global_avg_pool": GlobalAvgPool,
    "affine": Affine,
    "crop": Crop,
    "resize": Resize,
    "upsample": Upsample,
    "concat": Concat,
}
