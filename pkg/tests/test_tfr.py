import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hifiyolo.sigsynth import ChannelConfig, IQRecording, ModScheme, SignalBurst, ground_truth_boxes
from hifiyolo.sigsynth.scene import render_burst
from hifiyolo.tfr import (
    InvalidInputError,
    SpectrogramTransformer,
    collapse_laplacian,
    export_png,
    gaussian_pyramid,
    laplacian_pyramid,
    load_spectrogram,
    log_normalize,
    save_spectrogram,
    spectrogram,
    stft,
)


def test_tone_on_bin_center_concentrates_energy():
    n_fft, f_s = 64, 1000.0
    k0 = 5
    n = np.arange(64 * 8)
    x = np.exp(2j * np.pi * (k0 * f_s / n_fft) * n / f_s)
    X = stft(x, n_fft=n_fft, hop=n_fft, window="rect")
    energy = np.abs(X) ** 2
    col = n_fft // 2 + k0  # FFT-shifted position of bin k0
    assert np.all(energy[:, col] / energy.sum(axis=1) >= 0.99)


def test_zero_input_gives_zero_matrix():
    X = stft(np.zeros(1000, dtype=complex), n_fft=64, hop=32)
    assert X.shape == (32, 64) and not np.any(X)


def test_parseval_per_frame():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(640) + 1j * rng.standard_normal(640)
    X = stft(x, n_fft=64, hop=32, window="hann")
    from scipy.signal import get_window

    w = get_window("hann", 64, fftbins=True)
    for m in range(X.shape[0] - 2):
        frame = x[m * 32 : m * 32 + 64]
        assert np.sum(np.abs(X[m]) ** 2) == pytest.approx(64 * np.sum(np.abs(frame * w) ** 2), rel=1e-6)


def test_frame_definition_matches_direct_dft():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(300) + 1j * rng.standard_normal(300)
    X = stft(x, n_fft=40, hop=20, window="rect")
    assert X.shape[0] == 15  # ceil(300 / 20), tail zero-padded
    m, k = 3, 7
    n = np.arange(40)
    direct = np.sum(x[m * 20 : m * 20 + 40] * np.exp(-2j * np.pi * n * k / 40))
    assert np.fft.ifftshift(X[m])[k] == pytest.approx(direct, rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-3, 3), st.floats(-3, 3))
def test_stft_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    y = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    lhs = stft(a * x + b * y, 32, 16)
    rhs = a * stft(x, 32, 16) + b * stft(y, 32, 16)
    assert np.max(np.abs(lhs - rhs)) <= 1e-6 * max(1.0, np.max(np.abs(rhs)))


def test_stft_rejects_empty_and_bad_hop():
    with pytest.raises(InvalidInputError):
        stft(np.zeros(0, dtype=complex), 64, 32)
    with pytest.raises(InvalidInputError):
        stft(np.ones(100, dtype=complex), 64, 65)


def test_log_normalize_examples():
    assert np.ptp(log_normalize(np.zeros((4, 4)))) == 0
    rng = np.random.default_rng(2)
    X = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    np.testing.assert_allclose(log_normalize(10 * X), log_normalize(X), atol=1e-9)
    # one bin 40 dB above a flat floor
    Y = np.full((4, 4), 1.0, dtype=complex)
    Y[1, 2] = 100.0
    db = log_normalize(Y, floor_db=-60.0, unit_range=False)
    assert db.max() == 0.0 and db[1, 2] == 0.0
    np.testing.assert_allclose(np.delete(db.ravel(), 6), -40.0, atol=1e-6)
    unit = log_normalize(Y, floor_db=-60.0)
    assert unit[1, 2] == 1.0
    np.testing.assert_allclose(np.delete(unit.ravel(), 6), 20.0 / 60.0, atol=1e-6)
    assert unit.min() >= 0


def test_pyramid_levels_at_full_resolution():
    X = np.random.default_rng(3).random((640, 640))
    sizes = [lvl.shape for lvl in gaussian_pyramid(X, 5)]
    assert sizes == [(640, 640), (320, 320), (160, 160), (80, 80), (40, 40), (20, 20)]


def test_pyramid_constant_fixed_point():
    for lvl in gaussian_pyramid(np.full((64, 64), 0.37), 4):
        np.testing.assert_allclose(lvl, 0.37, atol=1e-12)
    for band in laplacian_pyramid(np.full((64, 64), 0.37), 4)[:-1]:
        assert np.max(np.abs(band)) < 1e-6


def test_pyramid_impulse_mass_and_kernel():
    X = np.zeros((32, 32))
    X[16, 16] = 1.0
    g1 = gaussian_pyramid(X, 1)[1]
    k = np.array([1, 4, 6, 4, 1]) / 16.0
    np.testing.assert_allclose(g1[7:10, 7:10], np.outer(k[::2], k[::2]), atol=1e-12)
    # decimation keeps every other sample, so mass of the even-phase impulse is 1/4 of the blurred total
    assert g1.sum() * 4 == pytest.approx(1.0, abs=1e-6)


def test_pyramid_requires_divisible_shape():
    with pytest.raises(ValueError):
        gaussian_pyramid(np.zeros((60, 64)), 3)


def test_laplacian_reconstruction():
    X = np.random.default_rng(4).random((160, 160))
    rec = collapse_laplacian(laplacian_pyramid(X, 5))
    assert np.linalg.norm(rec - X) / np.linalg.norm(X) < 1e-5


def test_white_noise_laplacian_band_variance():
    X = np.random.default_rng(5).standard_normal((128, 128))
    assert laplacian_pyramid(X, 2)[0].var() > gaussian_pyramid(X, 2)[1].var()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_gaussian_levels_do_not_amplify(seed):
    X = np.random.default_rng(seed).random((64, 64))
    levels = gaussian_pyramid(X, 4)
    for a, b in zip(levels, levels[1:]):
        assert b.max() <= a.max() + 1e-9


def test_tone_ridge_lands_in_ground_truth_row():
    f_s, n = 200e3, 12800
    burst = SignalBurst(ModScheme.AM_DSB, 37e3, 0.0, n / f_s, 12e3, seed=3)
    x = render_burst(burst, ChannelConfig(k_factor=1e6), n, f_s)
    rec = IQRecording(x, f_s, [burst], ChannelConfig())
    img = spectrogram(rec, n_fft=160, hop=80).image()
    (_, (cx, cy, w, h)), = ground_truth_boxes(rec, 160, 160)
    # AM-DSB carries a strong carrier at f_c: the brightest row is the box center row
    peak_row = int(np.argmax(img.mean(axis=1)))
    assert abs(peak_row + 0.5 - cy * 160) <= 1.0


def test_spectrogram_persistence(tmp_path):
    v = np.random.default_rng(6).random((12, 8)).astype(np.float32)
    save_spectrogram(tmp_path / "s.spec", v)
    raw = (tmp_path / "s.spec").read_bytes()
    assert raw[:8] == np.array([12, 8], dtype="<u4").tobytes()
    np.testing.assert_array_equal(load_spectrogram(tmp_path / "s.spec"), v)
    export_png(tmp_path / "s.png", v)
    from PIL import Image

    im = Image.open(tmp_path / "s.png")
    assert im.mode == "L" and im.size == (8, 12)


def test_spectrogram_unit_range_and_transformer():
    rng = np.random.default_rng(7)
    recs = [rng.standard_normal(1280) + 1j * rng.standard_normal(1280) for _ in range(2)]
    s = spectrogram(recs[0], n_fft=32, hop=16)
    assert s.values.max() == pytest.approx(1.0) and s.values.min() >= 0
    out = SpectrogramTransformer(n_fft=32, hop=16).fit_transform(recs)
    assert out.shape == (2, 32, 80)
    np.testing.assert_array_equal(out[0], s.image())
