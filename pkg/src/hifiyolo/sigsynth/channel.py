"""Rician flat-fading channel."""

from __future__ import annotations

import numpy as np

from .types import ChannelConfig

# K at or above this is treated as a pure line-of-sight channel
PURE_LOS_K = 1e6


def rician_gain(k_factor: float, size, rng: np.random.Generator, components: bool = False):
    """Draw complex gains with E|h|^2 = 1 and LOS/diffuse power ratio ``k_factor``.

    With ``components=True`` returns ``(los, diffuse)`` whose sum is the gain.
    """
    theta = rng.uniform(0.0, 2 * np.pi, size=size)
    if k_factor >= PURE_LOS_K:
        los = np.exp(1j * theta)
        diffuse = np.zeros_like(los)
    else:
        los = np.sqrt(k_factor / (k_factor + 1.0)) * np.exp(1j * theta)
        scatter = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)
        diffuse = np.sqrt(1.0 / (k_factor + 1.0)) * scatter
    return (los, diffuse) if components else los + diffuse


def _diffuse_process(n: int, doppler_hz: float, f_s: float, rng) -> np.ndarray:
    """Unit-power complex Gaussian process with a Gaussian Doppler spectrum."""
    white = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    f = np.fft.fftfreq(n, d=1.0 / f_s)
    shaped = np.fft.ifft(np.fft.fft(white) * np.exp(-0.5 * (f / max(doppler_hz, 1e-9)) ** 2))
    p = np.mean(np.abs(shaped) ** 2)
    return shaped / np.sqrt(p) if p > 0 else shaped


def apply_channel(x: np.ndarray, cfg: ChannelConfig, seed: int = 0, f_s: float = 200e3) -> np.ndarray:
    """Multiply a burst by a Rician gain (one draw per burst unless time-varying)."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("apply_channel needs a non-empty signal")
    rng = np.random.default_rng(seed)
    if cfg.fading_mode == "block-constant":
        return x * rician_gain(cfg.k_factor, None, rng)
    los = rician_gain(max(cfg.k_factor, PURE_LOS_K), None, rng)
    if cfg.k_factor >= PURE_LOS_K:
        return x * los
    k = cfg.k_factor
    h = np.sqrt(k / (k + 1.0)) * los + np.sqrt(1.0 / (k + 1.0)) * _diffuse_process(x.size, cfg.doppler_hz, f_s, rng)
    return x * h
