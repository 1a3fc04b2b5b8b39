"""Backbone building blocks and the low-frequency enhancement stage."""

from __future__ import annotations

import numpy as np

from ..nncore import Conv, Module, ShapeError, Tensor
from ..nncore import functional as F


class Bottleneck(Module):
    def __init__(self, c, rng):
        self.cv1 = Conv(c, c, 1, rng)
        self.cv2 = Conv(c, c, 3, rng)

    def forward(self, x):
        return x + self.cv2(self.cv1(x))


class C3(Module):
    """Two-branch block: a bottleneck path and a shortcut path, fused by a 1x1 conv."""

    def __init__(self, c_in, c_out, rng):
        hidden = max(c_out // 2, 1)
        self.cv1 = Conv(c_in, hidden, 1, rng)
        self.cv2 = Conv(c_in, hidden, 1, rng)
        self.m = Bottleneck(hidden, rng)
        self.cv3 = Conv(2 * hidden, c_out, 1, rng)

    def forward(self, x):
        return self.cv3(F.channel_concat([self.m(self.cv1(x)), self.cv2(x)]))


class LFEBlock(Module):
    """One backbone stage with optional pyramid injection.

    ``out = body(down(x_prev + inner(level)))`` where ``inner`` is a 1x1
    conv lifting the single-channel pyramid level to the width of
    ``x_prev`` and ``down`` a stride-2 3x3 conv.  With ``enhance=False``
    the residual branch is skipped.
    """

    def __init__(self, c_prev, c_out, rng, enhance=True, body=True):
        self.enhance = enhance
        if enhance:
            self.inner = Conv(1, c_prev, 1, rng, act=False)
        self.down = Conv(c_prev, c_out, 3, rng, stride=2)
        self.body = C3(c_out, c_out, rng) if body else None

    def forward(self, x_prev, level=None):
        if self.enhance:
            if level is None:
                raise ShapeError("LFE stage needs a pyramid level")
            level = level if isinstance(level, Tensor) else Tensor(np.asarray(level, dtype=x_prev.dtype))
            if level.shape[-2:] != x_prev.shape[-2:]:
                raise ShapeError(f"pyramid level {level.shape[-2:]} does not match features {x_prev.shape[-2:]}")
            x_prev = x_prev + self.inner(level)
        y = self.down(x_prev)
        return self.body(y) if self.body is not None else y


def lfe_block(x_prev, pyr_level, block: LFEBlock):
    """Functional form of :class:`LFEBlock`."""
    return block(x_prev, pyr_level)
