"""Scene description types."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ConfigurationError(ValueError):
    pass


class InvalidSpecError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class ModScheme(Enum):
    BPSK = "BPSK"
    QPSK = "QPSK"
    PSK8 = "8PSK"
    PSK16 = "16PSK"
    QAM16 = "16QAM"
    QAM64 = "64QAM"
    FSK2 = "2FSK"
    FSK4 = "4FSK"
    FSK8 = "8FSK"
    OOK = "OOK"
    ASK4 = "4ASK"
    ASK8 = "8ASK"
    AM_DSB = "AM-DSB"
    AM_SSB = "AM-SSB"

    @property
    def class_id(self) -> int:
        return _CLASS_IDS[self]

    @classmethod
    def from_id(cls, class_id: int) -> "ModScheme":
        return _BY_ID[int(class_id)]

    @classmethod
    def parse(cls, name) -> "ModScheme":
        if isinstance(name, ModScheme):
            return name
        key = str(name).strip().upper().replace("_", "-")
        for m in cls:
            if m.value.upper() == key or m.name == key.replace("-", "_"):
                return m
        raise ConfigurationError(f"unknown modulation scheme {name!r}")


_CLASS_IDS = {m: i for i, m in enumerate(ModScheme)}
_BY_ID = {i: m for m, i in _CLASS_IDS.items()}
CLASS_NAMES = [m.value for m in ModScheme]


@dataclass
class SignalBurst:
    scheme: ModScheme
    f_c: float
    t_start: float
    t_dur: float
    bw: float
    amplitude: float = 1.0
    seed: int = 0

    @property
    def class_id(self) -> int:
        return self.scheme.class_id


@dataclass
class ChannelConfig:
    k_factor: float = 4.0
    snr_db: float = 10.0
    fading_mode: str = "block-constant"
    doppler_hz: float = 5.0

    def __post_init__(self):
        if self.k_factor < 0:
            raise ConfigurationError(f"k_factor must be >= 0, got {self.k_factor}")
        if self.fading_mode not in ("block-constant", "time-varying"):
            raise ConfigurationError(f"unknown fading_mode {self.fading_mode!r}")


@dataclass
class SceneSpec:
    """Scene geometry. ``n_signals`` is a fixed count or an inclusive ``(lo, hi)`` range."""

    n_signals: int | tuple = (3, 5)
    max_overlap: float = 0.4
    n_samples: int = 204800
    f_s: float = 200e3
    rng_seed: int = 0
    schemes: tuple = field(default_factory=lambda: tuple(ModScheme))
    duration_range: tuple = (0.05, 1.0)
    bandwidth_range: tuple = (0.05, 0.3)
    max_attempts: int = 1000

    def __post_init__(self):
        lo, hi = self.count_range
        if lo < 1 or hi < lo:
            raise InvalidSpecError(f"invalid n_signals {self.n_signals!r}")
        if not 0 <= self.max_overlap <= 1:
            raise InvalidSpecError("max_overlap must lie in [0, 1]")
        if self.n_samples <= 0 or self.f_s <= 0:
            raise InvalidSpecError("n_samples and f_s must be positive")
        self.schemes = tuple(ModScheme.parse(s) for s in self.schemes)
        if not self.schemes:
            raise InvalidSpecError("at least one modulation scheme is required")

    @property
    def count_range(self):
        if isinstance(self.n_signals, (tuple, list)):
            return int(self.n_signals[0]), int(self.n_signals[1])
        return int(self.n_signals), int(self.n_signals)


@dataclass
class IQRecording:
    samples: np.ndarray
    f_s: float
    bursts: list
    channel: ChannelConfig
    seed: int = 0

    @property
    def num_signals(self) -> int:
        return len(self.bursts)

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return self.samples.size / self.f_s

    @property
    def snr_db(self) -> float:
        return self.channel.snr_db
