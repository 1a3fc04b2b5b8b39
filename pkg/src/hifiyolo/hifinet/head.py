"""Prediction heads: per-scale coupled heads or the cross-scale recombination head."""

from __future__ import annotations

import math

from ..nncore import Conv, Module
from ..nncore import functional as F
from .config import ModelConfig

STRIDES = (8, 16, 32)


def _prior_bias(bias, n_anchors, n_outputs, obj_index, obj_prior, cls_slice=None, cls_prior=None):
    b = bias.data.reshape(n_anchors, n_outputs)
    if obj_index is not None:
        b[:, obj_index] += obj_prior
    if cls_slice is not None:
        b[:, cls_slice] += cls_prior
    bias.data = b.reshape(-1).copy()


def _obj_prior(stride, img_size=640):
    # about 8 objects per image spread over the grid cells
    return math.log(8.0 / (img_size / stride) ** 2)


class CoupledHead(Module):
    def __init__(self, cfg: ModelConfig, rng, img_size=640):
        a, nc = cfg.n_anchors, cfg.n_classes
        self.a, self.nc = a, nc
        self.convs = [Conv(c, a * (5 + nc), cfg.head_kernel, rng, act=False) for c in cfg.neck_channels]
        for conv, s in zip(self.convs, STRIDES):
            _prior_bias(conv.bias, a, 5 + nc, 4, _obj_prior(s, img_size), slice(5, None), math.log(0.6 / (nc - 0.99)))

    def forward(self, feats):
        out = []
        for conv, x in zip(self.convs, feats):
            B, _, h, w = x.shape
            y = F.reshape(conv(x), (B, self.a, 5 + self.nc, h, w))
            out.append((y[:, :, :5], y[:, :, 5:]))
        return out


class RecombinationHead(Module):
    """Concatenate all neck maps at the finest resolution, then pool to each scale.

    Each scale has its own single-layer regression (box + objectness) and
    classification convolutions.
    """

    def __init__(self, cfg: ModelConfig, rng, img_size=640):
        a, nc = cfg.n_anchors, cfg.n_classes
        self.a, self.nc = a, nc
        c_all = sum(cfg.neck_channels)
        k = cfg.head_kernel
        self.reg = [Conv(c_all, a * 5, k, rng, act=False) for _ in STRIDES]
        self.cls = [Conv(c_all, a * nc, k, rng, act=False) for _ in STRIDES]
        for conv, s in zip(self.reg, STRIDES):
            _prior_bias(conv.bias, a, 5, 4, _obj_prior(s, img_size))
        for conv in self.cls:
            _prior_bias(conv.bias, a, nc, None, 0.0, slice(None), math.log(0.6 / (nc - 0.99)))

    @staticmethod
    def recombine(feats):
        """Resize every map to the finest one (bilinear) and concatenate channels."""
        target = feats[0].shape[-2:]
        maps = []
        for x in feats:
            while x.shape[-2:] != target:
                x = F.resize(x, 2, "bilinear")
            maps.append(x)
        return F.channel_concat(maps)

    def forward(self, feats):
        X = self.recombine(feats)
        out = []
        pooled = X
        for i, (reg, cls) in enumerate(zip(self.reg, self.cls)):
            if i:
                pooled = F.avg_pool2d(pooled, 2)
            B, _, h, w = pooled.shape
            out.append(
                (
                    F.reshape(reg(pooled), (B, self.a, 5, h, w)),
                    F.reshape(cls(pooled), (B, self.a, self.nc, h, w)),
                )
            )
        return out


def recombination_head(neck_feats, head: RecombinationHead):
    return head(neck_feats)



