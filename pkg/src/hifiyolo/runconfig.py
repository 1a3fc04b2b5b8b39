"""Run configuration: presets, key=value files and ``--set`` overrides."""

from __future__ import annotations

from dataclasses import MISSING, asdict, dataclass, fields
from pathlib import Path

from .hifinet import ModelConfig
from .sigsynth import ModScheme


class RunConfigError(ValueError):
    pass


MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))


@dataclass
class RunConfig:
    """Every knob of generate/train/eval/infer in one flat record."""

    preset: str = "desk"
    seed: int = 0
    # scenes
    n_scenes: int = 600
    n_samples: int = 12800
    f_s: float = 200e3
    n_signals: tuple = (3, 5)
    max_overlap: float = 0.4
    schemes: tuple = tuple(s.value for s in ModScheme)
    duration_range: tuple = (0.05, 1.0)
    bandwidth_range: tuple = (0.05, 0.3)
    snr_grid: tuple = (-10.0, -7.5, -5.0, -2.5, 0.0, 2.5, 5.0, 7.5, 10.0)
    k_factor: float = 4.0
    fading_mode: str = "block-constant"
    doppler_hz: float = 5.0
    manifest_only: bool = False
    # spectrogram
    n_fft: int = 160
    hop: int = 80
    floor_db: float = -80.0
    # split
    split: tuple = (0.6, 0.2, 0.2)
    # model
    L: int = 3
    channels: tuple = (8, 16, 32, 64, 64)
    g: int = 4
    head_kernel: int = 1
    lfe_mode: str = "gaussian"
    resample_up: str = "ca"
    resample_down: str = "ca"
    head_mode: str = "recombination"
    offset_scale: float = 0.25
    attention: str = "global"
    window: int = 9
    # training
    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.002
    weight_decay: float = 0.01
    warmup_epochs: float = 1.0
    time_budget_s: float = 0.0
    conf_thresh: float = 0.25
    iou_thresh: float = 0.45
    eval_conf: float = 0.001
    overfit: bool = False
    overfit_steps: int = 300

    def __post_init__(self):
        self.validate()

    # -- derived -------------------------------------------------------------------------
    @property
    def img_size(self) -> int:
        return self.n_fft

    @property
    def n_frames(self) -> int:
        return -(-self.n_samples // self.hop)

    def model_config(self) -> ModelConfig:
        vals = {k: getattr(self, k) for k in MODEL_KEYS if hasattr(self, k)}
        vals["n_classes"] = len(ModScheme)
        return ModelConfig(**vals)

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise RunConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise RunConfigError(f"split ratios must be three non-negative numbers summing to 1, got {self.split}")
        if self.n_scenes < 1:
            raise RunConfigError("n_scenes must be positive")
        if not self.snr_grid:
            raise RunConfigError("snr_grid is empty")
        for s in self.schemes:
            try:
                ModScheme.parse(s)
            except Exception as exc:
                raise RunConfigError(str(exc)) from None
        if self.n_frames != self.n_fft:
            raise RunConfigError(
                f"spectrogram must be square: {self.n_samples} samples / hop {self.hop} gives "
                f"{self.n_frames} frames but n_fft is {self.n_fft}"
            )
        if self.n_fft % 32:
            raise RunConfigError(f"image size {self.n_fft} must be a multiple of 32")
        if self.fading_mode not in ("block-constant", "time-varying"):
            raise RunConfigError(f"unknown fading_mode {self.fading_mode!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise RunConfigError("epochs must be >= 0 and batch_size >= 1")
        self.model_config()

    # -- text form ---------------------------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.to_dict().items())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def build(cls, preset: str = "desk", values: dict | None = None) -> "RunConfig":
        """Preset defaults overlaid with string or typed ``values``."""
        values = dict(values or {})
        preset = values.pop("preset", preset)
        if preset not in PRESETS:
            raise RunConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        base = dict(PRESETS[preset], preset=preset)
        defaults = {f.name: f.default if f.default_factory is MISSING else f.default_factory() for f in fields(cls)}
        merged = {**defaults, **base}
        known = set(merged)
        for key, raw in values.items():
            if key not in known:
                raise RunConfigError(f"unknown configuration key {key!r}")
            merged[key] = _coerce(defaults[key], raw)
        try:
            return cls(**merged)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, RunConfigError):
                raise
            raise RunConfigError(str(exc)) from None

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        values = parse_kv(Path(path).read_text())
        values.update(overrides or {})
        return cls.build(values.pop("preset", "desk"), values)


PRESETS = {
    # 160x160 spectrograms, pyramid depth 3, channel plan a quarter of the full model
    "desk": {},
    "paper": dict(
        n_scenes=36000,
        n_samples=204800,
        n_fft=640,
        hop=320,
        L=5,
        channels=(32, 64, 128, 256, 256),
        batch_size=32,
        epochs=300,
        attention="windowed",
        manifest_only=True,
    ),
}


def parse_kv(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise RunConfigError(f"line {n}: expected key=value, got {line!r}")
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise RunConfigError(f"--set expects key=value, got {item!r}")
        k, _, v = item.partition("=")
        out[k.strip()] = v.strip()
    return out


def _format(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(_format(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(default, value):
    if not isinstance(value, str):
        return tuple(value) if isinstance(default, tuple) else value
    value = value.strip()
    try:
        if isinstance(default, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, tuple):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            if default and isinstance(default[0], str):
                return tuple(parts)
            if default and isinstance(default[0], int) and not isinstance(default[0], bool):
                return tuple(int(p) for p in parts)
            return tuple(float(p) for p in parts)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise RunConfigError(f"cannot parse {value!r} as {type(default).__name__}") from None
    return value
