"""Differentiable operators.

Binary elementwise operators require equal shapes; the only broadcast
allowed is a 0-d (scalar) operand.  Spatial operators take ``(B, C, H, W)``
arrays; a bare ``(C, H, W)`` input is treated as a batch of one and
returned without the batch axis.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor


def _like(x: Tensor, other) -> Tensor:
    if isinstance(other, Tensor):
        return other
    return Tensor(np.asarray(other, dtype=x.dtype))


def _binary_operands(a, b):
    if not isinstance(a, Tensor):
        a = _like(b, a)
    b = _like(a, b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape} (only scalar broadcasting)")
    return a, b


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# elementwise ------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        ga = _reduce_to(g * b.data, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _reduce_to(g / b.data, a.shape) if a.requires_grad else None
        gb = _reduce_to(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward, "div")


def power(x: Tensor, p: float) -> Tensor:
    x = as_tensor(x)
    out = x.data**p

    def backward(g):
        return (g * p * x.data ** (p - 1),)

    return Tensor._make(out, (x,), backward, "pow")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return Tensor._make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return Tensor._make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def atan(x: Tensor) -> Tensor:
    return Tensor._make(np.arctan(x.data), (x,), lambda g: (g / (1.0 + x.data**2),), "atan")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s

    def backward(g):
        return (g * (s + out * (1.0 - s)),)

    return Tensor._make(out, (x,), backward, "silu")


def maximum(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    pick_a = a.data >= b.data

    def backward(g):
        ga = _reduce_to(np.where(pick_a, g, 0.0), a.shape) if a.requires_grad else None
        gb = _reduce_to(np.where(pick_a, 0.0, g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(np.where(pick_a, a.data, b.data), (a, b), backward, "maximum")


def minimum(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    pick_a = a.data <= b.data

    def backward(g):
        ga = _reduce_to(np.where(pick_a, g, 0.0), a.shape) if a.requires_grad else None
        gb = _reduce_to(np.where(pick_a, 0.0, g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(np.where(pick_a, a.data, b.data), (a, b), backward, "minimum")


def clamp_min(x: Tensor, lo: float) -> Tensor:
    keep = x.data > lo
    out = np.where(keep, x.data, lo).astype(x.dtype, copy=False)
    return Tensor._make(out, (x,), lambda g: (np.where(keep, g, 0.0),), "clamp_min")


# reductions and shape ---------------------------------------------------------


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = np.asarray(x.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return Tensor._make(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / float(n)) if n else sum(x, axis)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return Tensor._make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return Tensor._make(out, (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, slice, type(None), type(Ellipsis))) for p in parts)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[index] += g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return Tensor._make(out, (x,), backward, "getitem")


def take_rows(x: Tensor, idx) -> Tensor:
    """``x[idx]`` along axis 0 with a scatter-add backward."""
    idx = np.asarray(idx, dtype=np.intp)
    out = x.data[idx]

    def backward(g):
        flat = g.reshape(-1, *x.shape[1:])
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx.reshape(-1), flat)
        return (gx,)

    return Tensor._make(out, (x,), backward, "take_rows")


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree."""
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[d] != ref[d] for d in range(len(ref)) if d != axis % len(ref)
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out, tuple(tensors), backward, "concat")


def channel_concat(tensors) -> Tensor:
    """Concatenate feature maps along the channel axis (``-3``)."""
    return concat(tensors, axis=-3)


# linear algebra ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched ``a @ b`` over identical leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data @ b.data, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward, "softmax")


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """``softmax(q k^T / sqrt(d)) v`` with optional shared leading batch axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: q{q.shape} k{k.shape} v{v.shape}")
    d = q.shape[-1]
    perm = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    logits = mul(matmul(q, transpose(k, perm)), 1.0 / np.sqrt(d))
    return matmul(softmax(logits, axis=-1), v)


# losses -----------------------------------------------------------------------


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Elementwise binary cross-entropy on logits; ``target`` is constant."""
    z = logits.data
    t = np.asarray(target, dtype=z.dtype)
    if t.shape != z.shape:
        raise ShapeError(f"bce target shape {t.shape} != logits {z.shape}")
    out = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def backward(g):
        return (g * (_sigmoid(z) - t),)

    return Tensor._make(out, (logits,), backward, "bce_with_logits")


# spatial -------------------------------------------------------------------------


def _as_batched(x: Tensor):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected (C,H,W) or (B,C,H,W), got {x.shape}")
    return x, False


def _unbatch(out: Tensor, squeeze: bool) -> Tensor:
    return reshape(out, out.shape[1:]) if squeeze else out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation. ``weight`` is ``(C_out, C_in, k, k)`` with odd ``k``."""
    x, squeeze = _as_batched(as_tensor(x))
    weight = as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    c_out, c_in, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square and odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d stride must be 1 or 2, got {stride}")
    B, C, H, W = x.shape
    if C != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {C}, kernel expects {c_in}")
    k = kh
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError("conv2d output would be empty")
    wmat = weight.data.reshape(c_out, -1)

    if k == 1 and stride == 1 and pad == 0:
        cols = x.data.transpose(0, 2, 3, 1).reshape(-1, C)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        # (B, Ho, Wo, C, k, k) -> rows of C*k*k
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, C * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, c_out).transpose(0, 3, 1, 2))

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (gm.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=0)
        if x.requires_grad:
            gcols = gm @ wmat
            if k == 1 and stride == 1 and pad == 0:
                gx = np.ascontiguousarray(gcols.reshape(B, H, W, C).transpose(0, 3, 1, 2))
            else:
                gcols = gcols.reshape(B, Ho, Wo, C, k, k).transpose(0, 3, 4, 5, 1, 2)
                gxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[:, :, i, j]
                gx = gxp[:, :, pad : pad + H, pad : pad + W] if pad else gxp
                gx = np.ascontiguousarray(gx)
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _unbatch(Tensor._make(out, parents, backward, "conv2d"), squeeze)


def _pool_view(x: Tensor, k: int):
    B, C, H, W = x.shape
    if H % k or W % k:
        raise ShapeError(f"pooling window {k} does not divide spatial size {H}x{W}")
    return x.data.reshape(B, C, H // k, k, W // k, k)


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping ``k x k`` average pooling."""
    x, squeeze = _as_batched(as_tensor(x))
    out = _pool_view(x, k).mean(axis=(3, 5))

    def backward(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx.astype(g.dtype, copy=False),)

    return _unbatch(Tensor._make(out, (x,), backward, "avg_pool2d"), squeeze)


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping ``k x k`` max pooling; ties route gradient to the first maximum."""
    x, squeeze = _as_batched(as_tensor(x))
    B, C, H, W = x.shape
    v = _pool_view(x, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // k, W // k, k * k)
    arg = v.argmax(axis=-1)
    out = np.take_along_axis(v, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gv = np.zeros_like(v)
        np.put_along_axis(gv, arg[..., None], g[..., None], axis=-1)
        gx = gv.reshape(B, C, H // k, W // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        return (gx,)

    return _unbatch(Tensor._make(out, (x,), backward, "max_pool2d"), squeeze)


def base_grid(h: int, w: int, dtype=np.float64) -> np.ndarray:
    """Normalized ``(x, y)`` coordinates of pixel centers, shape ``(h, w, 2)``.

    Follows the align-corners-false convention: pixel ``i`` of an axis of
    length ``n`` sits at ``(2 i + 1) / n - 1``.
    """
    xs = (2.0 * np.arange(w, dtype=dtype) + 1.0) / w - 1.0
    ys = (2.0 * np.arange(h, dtype=dtype) + 1.0) / h - 1.0
    grid = np.empty((h, w, 2), dtype=dtype)
    grid[..., 0] = xs[None, :]
    grid[..., 1] = ys[:, None]
    return grid


def grid_sample(x: Tensor, coords: Tensor) -> Tensor:
    """Bilinear sampling of ``x`` at normalized ``coords`` (``(x, y)`` in ``[-1, 1]``).

    ``x`` is ``(B, C, H, W)`` and ``coords`` ``(B, H', W', 2)`` (or the
    unbatched forms).  Locations outside the map are clamped to the border.
    """
    x = as_tensor(x)
    coords = as_tensor(coords)
    squeeze = x.ndim == 3
    if squeeze:
        if coords.ndim != 3:
            raise ShapeError("unbatched grid_sample needs coords of shape (H', W', 2)")
        x = reshape(x, (1,) + x.shape)
        coords = reshape(coords, (1,) + coords.shape)
    if x.ndim != 4 or coords.ndim != 4 or coords.shape[-1] != 2 or coords.shape[0] != x.shape[0]:
        raise ShapeError(f"grid_sample: x{x.shape} coords{coords.shape}")
    B, C, H, W = x.shape
    _, Ho, Wo, _ = coords.shape
    cx = coords.data[..., 0]
    cy = coords.data[..., 1]
    px = ((cx + 1.0) * W - 1.0) * 0.5
    py = ((cy + 1.0) * H - 1.0) * 0.5
    in_x = (px > 0) & (px < W - 1)
    in_y = (py > 0) & (py < H - 1)
    # non-finite coordinates sample index 0 with NaN weights so the NaN propagates
    bad = ~(np.isfinite(px) & np.isfinite(py))
    px = np.clip(np.where(bad, 0.0, px), 0, W - 1)
    py = np.clip(np.where(bad, 0.0, py), 0, H - 1)
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x0 = np.minimum(x0, W - 1)
    y0 = np.minimum(y0, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx1 = (px - x0).astype(x.dtype)
    wy1 = (py - y0).astype(x.dtype)
    if bad.any():
        wx1[bad] = np.nan
    wx0 = 1.0 - wx1
    wy0 = 1.0 - wy1

    flat = x.data.transpose(0, 2, 3, 1).reshape(B * H * W, C)
    boff = (np.arange(B, dtype=np.intp) * H * W)[:, None, None]
    i00 = (boff + y0 * W + x0).reshape(-1)
    i01 = (boff + y0 * W + x1).reshape(-1)
    i10 = (boff + y1 * W + x0).reshape(-1)
    i11 = (boff + y1 * W + x1).reshape(-1)
    v00, v01, v10, v11 = flat[i00], flat[i01], flat[i10], flat[i11]
    w00 = (wy0 * wx0).reshape(-1, 1)
    w01 = (wy0 * wx1).reshape(-1, 1)
    w10 = (wy1 * wx0).reshape(-1, 1)
    w11 = (wy1 * wx1).reshape(-1, 1)
    out = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, C).transpose(0, 3, 1, 2))

    def backward(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(-1, C)
        gx = gc = None
        if x.requires_grad:
            acc = np.zeros_like(flat)
            np.add.at(acc, i00, gflat * w00)
            np.add.at(acc, i01, gflat * w01)
            np.add.at(acc, i10, gflat * w10)
            np.add.at(acc, i11, gflat * w11)
            gx = np.ascontiguousarray(acc.reshape(B, H, W, C).transpose(0, 3, 1, 2))
        if coords.requires_grad:
            wy0f, wy1f = wy0.reshape(-1, 1), wy1.reshape(-1, 1)
            wx0f, wx1f = wx0.reshape(-1, 1), wx1.reshape(-1, 1)
            dpx = ((v01 - v00) * wy0f + (v11 - v10) * wy1f) * gflat
            dpy = ((v10 - v00) * wx0f + (v11 - v01) * wx1f) * gflat
            dpx = dpx.sum(axis=1).reshape(B, Ho, Wo) * in_x * (0.5 * W)
            dpy = dpy.sum(axis=1).reshape(B, Ho, Wo) * in_y * (0.5 * H)
            gc = np.stack([dpx, dpy], axis=-1).astype(g.dtype, copy=False)
        return gx, gc

    out_t = Tensor._make(out, (x, coords), backward, "grid_sample")
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def resize(x: Tensor, scale: float, mode: str = "bilinear") -> Tensor:
    """Resize spatial dims by 2 or 0.5 (align-corners-false).

    Bilinear resizing is grid sampling on the fixed pixel-center grid, so it
    matches a zero-offset :func:`grid_sample` exactly.
    """
    if scale not in (2, 0.5):
        raise ValueError(f"unsupported resize scale {scale!r}; expected 2 or 0.5")
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"unsupported resize mode {mode!r}")
    x, squeeze = _as_batched(as_tensor(x))
    B, C, H, W = x.shape
    if scale == 0.5 and (H % 2 or W % 2):
        raise ShapeError(f"downsampling needs even spatial dims, got {H}x{W}")
    Ho, Wo = int(H * scale), int(W * scale)
    if mode == "bilinear":
        grid = np.broadcast_to(base_grid(Ho, Wo, x.dtype), (B, Ho, Wo, 2))
        return _unbatch(grid_sample(x, Tensor(grid)), squeeze)
    if scale == 2:
        out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

        def backward(g):
            return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    else:
        # align-corners-false nearest for 0.5 picks src index floor(2 i + 0.5) = 2 i
        out = np.ascontiguousarray(x.data[:, :, ::2, ::2])

        def backward(g):
            gx = np.zeros_like(x.data)
            gx[:, :, ::2, ::2] = g
            return (gx,)

    return _unbatch(Tensor._make(out, (x,), backward, "resize_nearest"), squeeze)
