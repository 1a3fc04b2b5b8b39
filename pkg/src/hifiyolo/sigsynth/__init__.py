"""Synthetic multi-signal RF scenes with ground truth."""

from .channel import apply_channel, rician_gain
from .io import read_iq, read_kv, read_labels, write_iq, write_kv, write_labels, write_scene
from .modulation import constellation, map_bits, modulate, rrc_pulse
from .scene import (
    box_to_mask,
    burst_rect,
    compose_scene,
    ground_truth_boxes,
    mask_to_box,
    overlap_ratio,
    place_bursts,
    placement_ok,
)
from .types import (
    CLASS_NAMES,
    ChannelConfig,
    ConfigurationError,
    GenerationError,
    InvalidSpecError,
    IQRecording,
    ModScheme,
    SceneSpec,
    SignalBurst,
)

__all__ = [
    "CLASS_NAMES",
    "ChannelConfig",
    "ConfigurationError",
    "GenerationError",
    "IQRecording",
    "InvalidSpecError",
    "ModScheme",
    "SceneSpec",
    "SignalBurst",
    "apply_channel",
    "box_to_mask",
    "burst_rect",
    "compose_scene",
    "constellation",
    "ground_truth_boxes",
    "map_bits",
    "mask_to_box",
    "modulate",
    "overlap_ratio",
    "place_bursts",
    "placement_ok",
    "read_iq",
    "read_kv",
    "read_labels",
    "rician_gain",
    "rrc_pulse",
    "write_iq",
    "write_kv",
    "write_labels",
    "write_scene",
]
