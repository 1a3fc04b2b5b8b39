"""Multi-burst scene composition and ground-truth geometry."""

from __future__ import annotations

import numpy as np

from .channel import apply_channel
from .modulation import modulate
from .types import ChannelConfig, GenerationError, IQRecording, SceneSpec, SignalBurst


def burst_rect(b: SignalBurst):
    """Time-frequency rectangle ``(t0, t1, f0, f1)`` of a burst."""
    return (b.t_start, b.t_start + b.t_dur, b.f_c - b.bw / 2, b.f_c + b.bw / 2)


def overlap_ratio(a, b) -> float:
    """Intersection area over the smaller rectangle's area."""
    dt = min(a[1], b[1]) - max(a[0], b[0])
    df = min(a[3], b[3]) - max(a[2], b[2])
    if dt <= 0 or df <= 0:
        return 0.0
    smaller = min((a[1] - a[0]) * (a[3] - a[2]), (b[1] - b[0]) * (b[3] - b[2]))
    return dt * df / smaller


def placement_ok(candidate, accepted, max_overlap: float) -> bool:
    return all(overlap_ratio(candidate, r) <= max_overlap for r in accepted)


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def place_bursts(spec: SceneSpec, rng: np.random.Generator) -> list:
    """Rejection-sample burst placements honoring ``spec.max_overlap``."""
    lo, hi = spec.count_range
    k = int(rng.integers(lo, hi + 1))
    n, f_s = spec.n_samples, spec.f_s
    bursts, rects = [], []
    attempts = 0
    while len(bursts) < k:
        if attempts >= spec.max_attempts:
            raise GenerationError(
                f"could not place {k} bursts within the retry budget of {spec.max_attempts} attempts"
            )
        attempts += 1
        scheme = spec.schemes[int(rng.integers(len(spec.schemes)))]
        n_len = max(1, int(round(_log_uniform(rng, *spec.duration_range) * n)))
        n_len = min(n_len, n)
        start = int(rng.integers(0, n - n_len + 1))
        bw = _log_uniform(rng, *spec.bandwidth_range) * f_s
        f_c = float(rng.uniform(-f_s / 2 + bw / 2, f_s / 2 - bw / 2))
        seed = int(rng.integers(0, 2**31 - 1))
        b = SignalBurst(scheme, f_c, start / f_s, n_len / f_s, bw, 1.0, seed)
        rect = burst_rect(b)
        if placement_ok(rect, rects, spec.max_overlap):
            bursts.append(b)
            rects.append(rect)
    return bursts


def render_burst(b: SignalBurst, channel: ChannelConfig, n_total: int, f_s: float) -> np.ndarray:
    """Modulate, fade and mix one burst into a zero-filled length-``n_total`` buffer."""
    start = int(round(b.t_start * f_s))
    n_len = int(round(b.t_dur * f_s))
    x = b.amplitude * modulate(b.scheme, b.bw, n_len / f_s, f_s, seed=b.seed)
    x = apply_channel(x, channel, seed=b.seed + 1, f_s=f_s)
    t = (start + np.arange(n_len)) / f_s
    out = np.zeros(n_total, dtype=complex)
    out[start : start + n_len] = x * np.exp(2j * np.pi * b.f_c * t)
    return out


def compose_scene(spec: SceneSpec, channel: ChannelConfig) -> IQRecording:
    """Sum K randomly placed bursts and add AWGN at ``channel.snr_db``.

    SNR is composite signal power over noise power across the whole
    recording.  Deterministic in ``spec.rng_seed``.
    """
    rng = np.random.default_rng(spec.rng_seed)
    bursts = place_bursts(spec, rng)
    clean = np.zeros(spec.n_samples, dtype=complex)
    for b in bursts:
        clean += render_burst(b, channel, spec.n_samples, spec.f_s)
    p_sig = np.mean(np.abs(clean) ** 2)
    p_noise = p_sig / 10 ** (channel.snr_db / 10)
    noise_rng = np.random.default_rng([spec.rng_seed, 1])
    w = np.sqrt(p_noise / 2) * (noise_rng.standard_normal(spec.n_samples) + 1j * noise_rng.standard_normal(spec.n_samples))
    return IQRecording(clean + w, spec.f_s, bursts, channel, spec.rng_seed)


def ground_truth_boxes(rec: IQRecording, n_t: int, n_f: int) -> list:
    """``(class_id, (cx, cy, w, h))`` per burst in normalized image coordinates.

    x runs along time over ``n_t`` frames of ``N / n_t`` samples; y runs
    along frequency with DC at 0.5 (FFT-shifted), covering ``[-f_s/2, f_s/2)``.
    """
    t_span = rec.n_samples / rec.f_s
    out = []
    for b in rec.bursts:
        cx = (b.t_start + b.t_dur / 2) / t_span
        cy = (b.f_c + rec.f_s / 2) / rec.f_s
        out.append((b.class_id, (cx, cy, b.t_dur / t_span, b.bw / rec.f_s)))
    return out


def box_to_mask(box, n_t: int, n_f: int) -> np.ndarray:
    """Rasterize a normalized box onto an ``(n_f, n_t)`` image (pixel centers inside)."""
    cx, cy, w, h = box
    cols = (np.arange(n_t) + 0.5) / n_t
    rows = (np.arange(n_f) + 0.5) / n_f
    in_x = (cols >= cx - w / 2) & (cols <= cx + w / 2)
    in_y = (rows >= cy - h / 2) & (rows <= cy + h / 2)
    return in_y[:, None] & in_x[None, :]


def mask_to_box(mask: np.ndarray):
    """Bounding box of a pixel mask in normalized ``(cx, cy, w, h)``."""
    n_f, n_t = mask.shape
    ys, xs = np.nonzero(mask)
    x0, x1 = xs.min() / n_t, (xs.max() + 1) / n_t
    y0, y1 = ys.min() / n_f, (ys.max() + 1) / n_f
    return ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)
