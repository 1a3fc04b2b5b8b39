"""FPN top-down plus PAN bottom-up fusion with configurable resamplers."""

from __future__ import annotations

from ..nncore import Conv, Module
from ..nncore import functional as F
from .blocks import C3
from .config import ModelConfig
from .resampler import CAResampler


class Neck(Module):
    def __init__(self, cfg: ModelConfig, rng):
        c3, c4, c5 = cfg.channels[2:]
        n3, n4, n5 = cfg.neck_channels
        self.cfg = cfg
        self.lat5 = Conv(c5, n5, 1, rng)
        self.td4 = C3(n5 + c4, n4, rng)
        self.lat4 = Conv(n4, n4, 1, rng)
        self.td3 = C3(n4 + c3, n3, rng)
        self.bu4 = C3(n3 + n4, n4, rng)
        self.bu5 = C3(n4 + n5, n5, rng)
        kw = dict(offset_scale=cfg.offset_scale, attention=cfg.attention, window=cfg.window)
        if cfg.resample_up == "ca":
            self.up5 = CAResampler(n5, c4, 2, cfg.g, rng, **kw)
            self.up4 = CAResampler(n4, c3, 2, cfg.g, rng, **kw)
        if cfg.resample_down == "ca":
            self.down3 = CAResampler(n3, n4, 0.5, cfg.g, rng, **kw)
            self.down4 = CAResampler(n4, n5, 0.5, cfg.g, rng, **kw)
        else:
            self.down3 = Conv(n3, n3, 3, rng, stride=2)
            self.down4 = Conv(n4, n4, 3, rng, stride=2)

    def _up(self, name, x, guide):
        if self.cfg.resample_up == "ca":
            return getattr(self, name)(x, guide)
        return F.resize(x, 2, "bilinear")

    def _down(self, name, x, guide):
        if self.cfg.resample_down == "ca":
            return getattr(self, name)(x, guide)
        return getattr(self, name)(x)

    def forward(self, feats):
        p3, p4, p5 = feats
        l5 = self.lat5(p5)
        t4 = self.td4(F.channel_concat([self._up("up5", l5, p4), p4]))
        l4 = self.lat4(t4)
        o3 = self.td3(F.channel_concat([self._up("up4", l4, p3), p3]))
        o4 = self.bu4(F.channel_concat([self._down("down3", o3, l4), l4]))
        o5 = self.bu5(F.channel_concat([self._down("down4", o4, l5), l5]))
        return [o3, o4, o5]


def build_neck(backbone_feats, neck: Neck):
    return neck(backbone_feats)
