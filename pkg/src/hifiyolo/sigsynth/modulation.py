"""Complex-baseband modulators for the 14 supported schemes."""

from __future__ import annotations

import numpy as np

from .types import ConfigurationError, InvalidSpecError, ModScheme

ROLLOFF = 0.35
SPAN = 8  # symbols covered by the truncated RRC pulse
AM_INDEX = 0.5

_PSK = {ModScheme.BPSK: 2, ModScheme.QPSK: 4, ModScheme.PSK8: 8, ModScheme.PSK16: 16}
_QAM = {ModScheme.QAM16: 16, ModScheme.QAM64: 64}
_ASK = {ModScheme.ASK4: 4, ModScheme.ASK8: 8, ModScheme.OOK: 2}
_FSK = {ModScheme.FSK2: 2, ModScheme.FSK4: 4, ModScheme.FSK8: 8}
LINEAR = set(_PSK) | set(_QAM) | set(_ASK)


def bits_per_symbol(scheme: ModScheme) -> int:
    order = _PSK.get(scheme) or _QAM.get(scheme) or _ASK.get(scheme) or _FSK.get(scheme)
    if order is None:
        raise ConfigurationError(f"{scheme.value} is not a keyed scheme")
    return int(np.log2(order))


def constellation(scheme: ModScheme) -> np.ndarray:
    """Symbol alphabet indexed by the natural-binary value of each bit group.

    PSK/QAM/ASK alphabets have unit mean energy; OOK is ``{0, 1}``.
    """
    if scheme in _PSK:
        m = _PSK[scheme]
        if m == 2:
            return np.array([1.0, -1.0], dtype=complex)
        offset = np.pi / 4 if m == 4 else 0.0
        return np.exp(1j * (2 * np.pi * np.arange(m) / m + offset))
    if scheme in _QAM:
        side = int(np.sqrt(_QAM[scheme]))
        levels = np.arange(-(side - 1), side, 2, dtype=float)
        pts = (levels[:, None] + 1j * levels[None, :]).reshape(-1)
        return pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    if scheme is ModScheme.OOK:
        return np.array([0.0, 1.0], dtype=complex)
    if scheme in _ASK:
        m = _ASK[scheme]
        levels = np.arange(-(m - 1), m, 2, dtype=float)
        return (levels / np.sqrt(np.mean(levels**2))).astype(complex)
    raise ConfigurationError(f"{scheme.value} has no constellation")


def map_bits(scheme: ModScheme, bits) -> np.ndarray:
    """Map a bit stream (MSB first per group) onto constellation points."""
    k = bits_per_symbol(scheme)
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % k:
        raise InvalidSpecError(f"{bits.size} bits is not a multiple of {k}")
    groups = bits.reshape(-1, k)
    idx = groups @ (1 << np.arange(k - 1, -1, -1))
    return constellation(scheme)[idx]


def rrc_pulse(t: np.ndarray, beta: float = ROLLOFF, span: int = SPAN) -> np.ndarray:
    """Root-raised-cosine impulse response at times ``t`` in symbol periods, truncated to ``|t| <= span/2``."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    zero = np.isclose(t, 0.0, atol=1e-12)
    sing = np.isclose(np.abs(t), 1.0 / (4 * beta), atol=1e-12)
    reg = ~(zero | sing)
    tr = t[reg]
    out[reg] = (np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))) / (
        np.pi * tr * (1 - (4 * beta * tr) ** 2)
    )
    out[zero] = 1 - beta + 4 * beta / np.pi
    out[sing] = (beta / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    out[np.abs(t) > span / 2] = 0.0
    return out


def shape_symbols(symbols: np.ndarray, sps: float, n: int) -> np.ndarray:
    """Sum of RRC pulses at spacing ``sps`` samples, evaluated on ``n`` samples.

    ``symbols[j]`` is centered at sample ``(j - SPAN // 2) * sps`` so the
    leading pulse tails are already settled at sample 0.
    """
    half = SPAN // 2
    tau = np.arange(n) / sps + half  # position in symbol units, offset by the lead-in
    base = np.floor(tau).astype(np.int64)
    out = np.zeros(n, dtype=complex)
    for j in range(-half, half + 1):
        k = base + j
        valid = (k >= 0) & (k < symbols.size)
        out[valid] += symbols[k[valid]] * rrc_pulse(tau[valid] - k[valid])
    return out


def _lowpass_noise(rng, n: int, cutoff: float, f_s: float, one_sided: bool = False) -> np.ndarray:
    """Gaussian noise band-limited by an ideal FFT mask."""
    spec = np.fft.fft(rng.standard_normal(n))
    f = np.fft.fftfreq(n, d=1.0 / f_s)
    if one_sided:
        mask = (f > 0) & (f <= cutoff)
        spec = spec * mask * 2.0
    else:
        spec = spec * (np.abs(f) <= cutoff)
    x = np.fft.ifft(spec)
    return x if one_sided else x.real


def _unit_power(x: np.ndarray) -> np.ndarray:
    p = np.mean(np.abs(x) ** 2)
    return x / np.sqrt(p) if p > 0 else x


def modulate(scheme, bw: float, dur: float, f_s: float, seed: int = 0, bits=None) -> np.ndarray:
    """Unit-power complex baseband burst of ``round(dur * f_s)`` samples occupying about ``bw`` Hz.

    Linear schemes use RRC shaping at symbol rate ``bw / (1 + ROLLOFF)``;
    M-FSK keys ``M`` tones spaced by the symbol rate ``bw / (M + 1)`` with a
    continuous phase; AM schemes carry a Gaussian message band-limited to
    the occupied band.  ``bits`` overrides the random payload of keyed schemes.
    """
    scheme = ModScheme.parse(scheme)
    if bw <= 0 or dur <= 0 or f_s <= 0:
        raise InvalidSpecError("bw, dur and f_s must be positive")
    if bw > 0.3 * f_s + 1e-9:
        raise InvalidSpecError(f"bandwidth {bw} exceeds 0.3 * f_s")
    n = int(round(dur * f_s))
    rng = np.random.default_rng(seed)

    if scheme in LINEAR:
        sps = f_s * (1 + ROLLOFF) / bw
        if n < sps:
            raise InvalidSpecError(f"{n} samples is shorter than one symbol ({sps:.1f} samples)")
        k = bits_per_symbol(scheme)
        n_sym = int(np.ceil(n / sps)) + SPAN + 1
        if bits is None:
            bits = rng.integers(0, 2, size=n_sym * k)
        else:
            bits = np.resize(np.asarray(bits, dtype=np.int64), n_sym * k)
        return _unit_power(shape_symbols(map_bits(scheme, bits), sps, n))

    if scheme in _FSK:
        m = _FSK[scheme]
        rs = bw / (m + 1)
        sps = f_s / rs
        if n < sps:
            raise InvalidSpecError(f"{n} samples is shorter than one symbol ({sps:.1f} samples)")
        k = bits_per_symbol(scheme)
        n_sym = int(np.ceil(n / sps)) + 1
        if bits is None:
            sym = rng.integers(0, m, size=n_sym)
        else:
            b = np.resize(np.asarray(bits, dtype=np.int64), n_sym * k).reshape(-1, k)
            sym = b @ (1 << np.arange(k - 1, -1, -1))
        tones = (np.arange(m) - (m - 1) / 2) * rs
        f_inst = tones[sym[(np.arange(n) / sps).astype(np.int64)]]
        phase = 2 * np.pi * np.cumsum(f_inst) / f_s
        return np.exp(1j * phase)

    if scheme in (ModScheme.AM_DSB, ModScheme.AM_SSB):
        if n < f_s / bw:
            raise InvalidSpecError("burst shorter than one period of its bandwidth")
        if scheme is ModScheme.AM_DSB:
            msg = _lowpass_noise(rng, n, bw / 2, f_s)
            msg = msg / np.max(np.abs(msg))
            return _unit_power((1.0 + AM_INDEX * msg).astype(complex))
        # upper sideband of a message limited to bw, re-centered on DC
        analytic = _lowpass_noise(rng, n, bw, f_s, one_sided=True)
        t = np.arange(n) / f_s
        return _unit_power(analytic * np.exp(-1j * np.pi * bw * t))

    raise ConfigurationError(f"unsupported scheme {scheme!r}")
