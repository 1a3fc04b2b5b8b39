"""Network configuration and its key=value file form."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


_CHOICES = {
    "lfe_mode": ("off", "gaussian", "laplacian"),
    "resample_up": ("bilinear", "ca"),
    "resample_down": ("strided-conv", "ca"),
    "head_mode": ("original", "recombination"),
    "attention": ("global", "windowed"),
}


@dataclass
class ModelConfig:
    """Architecture switches.

    ``channels`` are the five backbone stage widths (strides 2..32); the
    neck widths default to the last three.  ``L`` is the number of leading
    stages that receive pyramid levels (and the pyramid depth).
    """

    L: int = 5
    channels: tuple = (32, 64, 128, 256, 256)
    neck_channels: tuple = ()
    g: int = 4
    head_kernel: int = 1
    lfe_mode: str = "gaussian"
    resample_up: str = "ca"
    resample_down: str = "ca"
    head_mode: str = "recombination"
    n_classes: int = 14
    n_anchors: int = 3
    offset_scale: float = 0.25
    attention: str = "global"
    window: int = 9

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 5:
            raise ConfigError(f"channels needs 5 stage widths, got {self.channels}")
        if not self.neck_channels:
            self.neck_channels = self.channels[2:]
        self.neck_channels = tuple(int(c) for c in self.neck_channels)
        if len(self.neck_channels) != 3:
            raise ConfigError("neck_channels needs 3 widths")
        if not 1 <= self.L <= 5:
            raise ConfigError(f"L must lie in [1, 5], got {self.L}")
        for key, allowed in _CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key}={getattr(self, key)!r}; expected one of {allowed}")
        uses_ca = self.resample_up == "ca" or self.resample_down == "ca"
        if uses_ca and any(c % self.g for c in self.neck_channels):
            raise ConfigError(f"g={self.g} must divide every neck width {self.neck_channels}")
        if self.head_kernel % 2 == 0:
            raise ConfigError("head_kernel must be odd")

    @property
    def stride_max(self) -> int:
        return 32

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, (tuple, list)):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in known:
                raise ConfigError(f"unknown model config key {k!r}")
            kwargs[k] = _coerce(known[k].default, v)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        from ..sigsynth.io import read_kv

        return cls.from_dict(read_kv(path))


def _coerce(default, value):
    if not isinstance(value, str):
        return value
    if isinstance(default, tuple):
        return tuple(int(x) for x in value.split(",") if x.strip())
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value
