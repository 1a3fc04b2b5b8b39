"""The detector network: pyramid-enhanced backbone, content-aware neck and heads."""

from .blocks import C3, LFEBlock, lfe_block
from .config import ConfigError, ModelConfig
from .head import STRIDES, CoupledHead, RecombinationHead, recombination_head
from .model import HifiYoloNet, build_pyramids
from .neck import Neck, build_neck
from .resampler import CAResampler, ca_resample

__all__ = [
    "C3",
    "CAResampler",
    "ConfigError",
    "CoupledHead",
    "HifiYoloNet",
    "LFEBlock",
    "ModelConfig",
    "Neck",
    "RecombinationHead",
    "STRIDES",
    "build_neck",
    "build_pyramids",
    "ca_resample",
    "lfe_block",
    "recombination_head",
]
