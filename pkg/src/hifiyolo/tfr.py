"""Spectrogram front end and multi-scale image pyramids."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.signal import get_window
from sklearn.base import BaseEstimator, TransformerMixin

# 5-tap binomial approximation of a Gaussian
BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class InvalidInputError(ValueError):
    pass


@dataclass
class Spectrogram:
    """Peak-normalized log-power spectrogram.

    ``values`` has shape ``(n_frames, n_fft)``: rows are time frames, columns
    FFT-shifted frequency bins (DC at column ``n_fft // 2``).  With
    ``unit_range`` the dB values (max 0, floor ``floor_db``) are mapped
    affinely onto ``[0, 1]``.
    """

    values: np.ndarray
    window: np.ndarray
    hop: int
    f_s: float
    floor_db: float = -80.0
    unit_range: bool = True

    @property
    def shape(self):
        return self.values.shape

    def image(self) -> np.ndarray:
        """Detector input: frequency on rows, time on columns."""
        return np.ascontiguousarray(self.values.T)


def stft(rec, n_fft: int = 640, hop: int = 320, window: str = "hann") -> np.ndarray:
    """Frame-wise DFT ``X[m, k] = sum_n r[m*hop + n] w[n] exp(-2j pi n k / n_fft)``.

    ``rec`` is an :class:`~hifiyolo.sigsynth.IQRecording` or a complex array.
    There are ``ceil(N / hop)`` frames; samples past the end are zeros.  The
    frequency axis is FFT-shifted.
    """
    r = np.asarray(getattr(rec, "samples", rec))
    if r.ndim != 1 or r.size == 0:
        raise InvalidInputError("stft needs a non-empty 1-D sample array")
    # any positive length: the 640- and 160-bin geometries are not powers of two
    if n_fft <= 0:
        raise InvalidInputError(f"n_fft must be positive, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise InvalidInputError(f"hop must be in (0, n_fft], got {hop}")
    w = window_array(window, n_fft)
    n_frames = -(-r.size // hop)
    padded = np.zeros((n_frames - 1) * hop + n_fft, dtype=np.complex128)
    padded[: r.size] = r
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_frames]
    X = np.fft.fft(frames * w, axis=1)
    return np.fft.fftshift(X, axes=1)


def window_array(window, n: int) -> np.ndarray:
    if isinstance(window, np.ndarray):
        if window.shape != (n,):
            raise InvalidInputError("window length must equal n_fft")
        return window
    if window in ("rect", "rectangular", "boxcar"):
        return np.ones(n)
    return get_window(window, n, fftbins=True)


def log_normalize(X: np.ndarray, floor_db: float = -80.0, unit_range: bool = True, eps_rel: float = 1e-12) -> np.ndarray:
    """Log power in dB, shifted so the peak is 0 and clipped at ``floor_db``.

    ``eps_rel`` regularizes the log relative to the peak power so the result
    is invariant to a global scaling of ``X``.  With ``unit_range`` the dB
    range ``[floor_db, 0]`` maps onto ``[0, 1]``.
    """
    X = np.asarray(X)
    if X.size == 0:
        raise InvalidInputError("empty spectrum")
    power = np.abs(X) ** 2
    peak = float(power.max())
    eps = eps_rel * peak if peak > 0 else 1e-30
    db = 10.0 * np.log10(power + eps)
    db = db - db.max()
    db = np.maximum(db, floor_db)
    if unit_range:
        return (db - floor_db) / (-floor_db)
    return db


def spectrogram(rec, n_fft=640, hop=320, window="hann", floor_db=-80.0, unit_range=True) -> Spectrogram:
    X = stft(rec, n_fft=n_fft, hop=hop, window=window)
    f_s = float(getattr(rec, "f_s", 1.0))
    return Spectrogram(
        values=log_normalize(X, floor_db, unit_range).astype(np.float32),
        window=window_array(window, n_fft),
        hop=hop,
        f_s=f_s,
        floor_db=floor_db,
        unit_range=unit_range,
    )


# pyramids -------------------------------------------------------------------


def _blur(x: np.ndarray) -> np.ndarray:
    y = ndimage.correlate1d(x, BINOMIAL_5, axis=0, mode="reflect")
    return ndimage.correlate1d(y, BINOMIAL_5, axis=1, mode="reflect")


def _check_divisible(shape, levels):
    if levels < 1:
        raise ValueError(f"pyramid depth must be >= 1, got {levels}")
    f = 2**levels
    if shape[0] % f or shape[1] % f:
        raise ValueError(f"spatial size {shape} is not divisible by 2^{levels}={f}")


def gaussian_pyramid(X: np.ndarray, levels: int) -> list[np.ndarray]:
    """``levels + 1`` maps: the input, then repeated 5x5 binomial blur and 2x decimation."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("pyramid input must be a 2-D matrix")
    _check_divisible(X.shape, levels)
    out = [X]
    for _ in range(levels):
        out.append(_blur(out[-1])[::2, ::2])
    return out


def _expand(x: np.ndarray) -> np.ndarray:
    """2x polyphase interpolation with the binomial kernel (edge-replicated)."""

    def expand_axis(a, axis):
        a = np.moveaxis(a, axis, 0)
        p = np.concatenate([a[:1], a, a[-1:]], axis=0)
        even = (p[:-2] + 6.0 * p[1:-1] + p[2:]) / 8.0
        odd = (p[1:-1] + p[2:]) / 2.0
        out = np.empty((2 * a.shape[0],) + a.shape[1:], dtype=a.dtype)
        out[0::2] = even
        out[1::2] = odd
        return np.moveaxis(out, 0, axis)

    return expand_axis(expand_axis(x, 0), 1)


def laplacian_pyramid(X: np.ndarray, levels: int) -> list[np.ndarray]:
    """Band-pass levels ``G_l - expand(G_{l+1})`` plus the coarsest Gaussian residual."""
    g = gaussian_pyramid(X, levels)
    bands = [g[i] - _expand(g[i + 1]) for i in range(levels)]
    return bands + [g[-1]]


def collapse_laplacian(pyr: list[np.ndarray]) -> np.ndarray:
    x = pyr[-1]
    for band in reversed(pyr[:-1]):
        x = band + _expand(x)
    return x


# persistence ------------------------------------------------------------------


def save_spectrogram(path, values: np.ndarray) -> None:
    """Row-major float32 payload behind an 8-byte header (n_t, n_f as LE u32)."""
    values = np.asarray(values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", *values.shape))
        fh.write(np.ascontiguousarray(values).tobytes())


def load_spectrogram(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    n_t, n_f = struct.unpack_from("<II", buf, 0)
    return np.frombuffer(buf, dtype="<f4", count=n_t * n_f, offset=8).reshape(n_t, n_f).astype(np.float32)


def export_png(path, values: np.ndarray) -> None:
    from PIL import Image

    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    Image.fromarray((scaled * 255).round().astype(np.uint8), mode="L").save(path)


class SpectrogramTransformer(TransformerMixin, BaseEstimator):
    """Map I/Q recordings to detector images (frequency rows x time columns)."""

    def __init__(self, n_fft=640, hop=320, window="hann", floor_db=-80.0):
        self.n_fft = n_fft
        self.hop = hop
        self.window = window
        self.floor_db = floor_db

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return np.stack(
            [spectrogram(r, self.n_fft, self.hop, self.window, self.floor_db).image() for r in X]
        )
