"""Content-adaptive resampling: attention-generated offsets on a bilinear grid."""

from __future__ import annotations

import numpy as np

from ..nncore import Conv, Module, Tensor, parameter
from ..nncore import functional as F
from .config import ConfigError


def _window_index(h_out, w_out, h_in, w_in, scale, window):
    """Flat source indices of a ``window x window`` neighborhood per output pixel, plus a validity mask."""
    r = window // 2
    oy, ox = np.meshgrid(np.arange(h_out), np.arange(w_out), indexing="ij")
    if scale >= 1:
        cy, cx = oy // int(scale), ox // int(scale)
    else:
        step = int(round(1 / scale))
        cy, cx = oy * step, ox * step
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    sy = cy.reshape(-1, 1) + dy.reshape(1, -1)
    sx = cx.reshape(-1, 1) + dx.reshape(1, -1)
    valid = (sy >= 0) & (sy < h_in) & (sx >= 0) & (sx < w_in)
    idx = np.clip(sy, 0, h_in - 1) * w_in + np.clip(sx, 0, w_in - 1)
    return idx, valid


class CAResampler(Module):
    """Resample ``x_low`` by ``scale`` (2 or 0.5) using a guide map at the target resolution.

    Queries are guide pixels, keys the channel-aligned source pixels, and
    values their projection to ``2 g`` offset channels.  Offsets (in source
    pixels, times ``offset_scale``) displace the fixed bilinear grid
    separately for each of the ``g`` channel groups.
    """

    def __init__(self, c_in, c_guide, scale, g, rng, offset_scale=0.25, attention="global", window=9, dtype=np.float32):
        if scale not in (2, 0.5):
            raise ConfigError(f"resampling scale must be 2 or 0.5, got {scale}")
        if c_in % g:
            raise ConfigError(f"{c_in} channels cannot be split into g={g} groups")
        self.scale = scale
        self.g = g
        self.c_in = c_in
        self.c_guide = c_guide
        self.offset_scale = offset_scale
        self.attention = attention
        self.window = window
        self.align = Conv(c_in, c_guide, 1, rng, act=False, dtype=dtype)
        # zero projection: the initial resampling is plain bilinear
        self.w_v = parameter((c_guide, 2 * g), rng, "zeros", dtype=dtype)

    def offsets(self, x_low, guide):
        """Attention offsets ``S`` with shape ``(B, H', W', 2g)``."""
        B, _, h, w = x_low.shape
        _, cq, H, W = guide.shape
        a = self.align(x_low)
        q = F.transpose(F.reshape(guide, (B, cq, H * W)), (0, 2, 1))
        k = F.transpose(F.reshape(a, (B, cq, h * w)), (0, 2, 1))
        v = F.reshape(F.matmul(F.reshape(k, (B * h * w, cq)), self.w_v), (B, h * w, 2 * self.g))
        if self.attention == "global":
            s = F.scaled_dot_attention(q, k, v)
        else:
            s = self._windowed(q, k, v, B, H, W, h, w)
        return F.reshape(s, (B, H, W, 2 * self.g))

    def _windowed(self, q, k, v, B, H, W, h, w):
        idx, valid = _window_index(H, W, h, w, self.scale, self.window)
        n_q, n_w = idx.shape
        gidx = (np.arange(B)[:, None, None] * (h * w) + idx[None]).reshape(-1)
        cq = q.shape[-1]
        kg = F.reshape(F.take_rows(F.reshape(k, (B * h * w, cq)), gidx), (B * n_q, n_w, cq))
        vg = F.reshape(F.take_rows(F.reshape(v, (B * h * w, 2 * self.g)), gidx), (B * n_q, n_w, 2 * self.g))
        qr = F.reshape(q, (B * n_q, 1, cq))
        logits = F.matmul(qr, F.transpose(kg, (0, 2, 1))) * (1.0 / np.sqrt(cq))
        bias = np.where(valid, 0.0, -1e9).astype(q.dtype)
        logits = logits + Tensor(np.broadcast_to(bias[None, :, None, :], (B, n_q, 1, n_w)).reshape(B * n_q, 1, n_w))
        s = F.matmul(F.softmax(logits, axis=-1), vg)
        return F.reshape(s, (B, n_q, 2 * self.g))

    def forward(self, x_low, guide):
        B, C, h, w = x_low.shape
        H, W = int(h * self.scale), int(w * self.scale)
        if guide.shape[-2:] != (H, W):
            raise ConfigError(f"guide is {guide.shape[-2:]}, expected {(H, W)} for scale {self.scale}")
        g = self.g
        s = F.reshape(self.offsets(x_low, guide), (B, H, W, g, 2))
        # source-pixel offsets -> normalized coordinates
        to_norm = np.empty((B, H, W, g, 2), dtype=x_low.dtype)
        to_norm[..., 0] = self.offset_scale * 2.0 / w
        to_norm[..., 1] = self.offset_scale * 2.0 / h
        grid = np.broadcast_to(F.base_grid(H, W, x_low.dtype)[None, :, :, None, :], (B, H, W, g, 2)).copy()
        coords = Tensor(grid) + s * Tensor(to_norm)
        coords = F.reshape(F.transpose(coords, (0, 3, 1, 2, 4)), (B * g, H, W, 2))
        xg = F.reshape(x_low, (B * g, C // g, h, w))
        out = F.grid_sample(xg, coords)
        return F.reshape(out, (B, C, H, W))


def ca_resample(x_low, guide, state: CAResampler):
    """Functional form of :meth:`CAResampler.forward`."""
    return state(x_low, guide)
