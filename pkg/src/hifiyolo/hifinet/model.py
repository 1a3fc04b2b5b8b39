"""Full detector network: pyramid-enhanced backbone, neck and head."""

from __future__ import annotations

import numpy as np

from ..nncore import Module, Tensor
from ..tfr import gaussian_pyramid, laplacian_pyramid
from .blocks import LFEBlock
from .config import ModelConfig
from .head import CoupledHead, RecombinationHead
from .neck import Neck


def build_pyramids(images: np.ndarray, levels: int, mode: str) -> list:
    """Per-level ``(B, 1, h, w)`` arrays of pyramid levels ``0 .. levels-1`` for a batch."""
    images = np.asarray(images)
    if mode == "off":
        return []
    fn = gaussian_pyramid if mode == "gaussian" else laplacian_pyramid
    per_image = [fn(img, levels) for img in images]
    return [np.stack([p[l] for p in per_image])[:, None].astype(images.dtype) for l in range(levels)]


class HifiYoloNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, img_size: int = 640, dtype=np.float32):
        self.cfg = cfg
        self.img_size = img_size
        rng = np.random.default_rng(seed)
        widths = (1,) + cfg.channels
        self.stages = [
            LFEBlock(widths[i], widths[i + 1], rng, enhance=cfg.lfe_mode != "off" and i < cfg.L, body=i > 0)
            for i in range(5)
        ]
        self.neck = Neck(cfg, rng)
        head_cls = RecombinationHead if cfg.head_mode == "recombination" else CoupledHead
        self.head = head_cls(cfg, rng, img_size=img_size)
        if dtype != np.float32:
            self.astype(dtype)

    def pyramids(self, images):
        return build_pyramids(images, self.cfg.L, self.cfg.lfe_mode)

    def backbone(self, x, pyr):
        feats = []
        for i, stage in enumerate(self.stages):
            x = stage(x, pyr[i] if stage.enhance else None)
            feats.append(x)
        return feats[2:]

    def forward(self, images, pyr=None):
        """``images``: ``(B, H, W)`` array or ``(B, 1, H, W)`` tensor. Returns per-scale ``(reg, cls)``."""
        if isinstance(images, Tensor):
            x = images
            raw = images.data[:, 0]
        else:
            raw = np.asarray(images)
            dtype = self.stages[0].down.weight.dtype
            x = Tensor(raw[:, None].astype(dtype))
        if pyr is None:
            pyr = self.pyramids(raw.astype(x.dtype))
        return self.head(self.neck(self.backbone(x, pyr)))
