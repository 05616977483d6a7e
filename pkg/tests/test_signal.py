"""Preprocessing chain: rate conversion, filtering, windowing, band power."""

import numpy as np
import pytest

from stiln.errors import ConfigError, ShapeError
from stiln.signal import (
    BANDS,
    PreprocessConfig,
    band_power,
    bandpass,
    preprocess_trial,
    remove_baseline,
    resample,
    split_windows,
)


def tone(freq, fs, seconds, amp=1.0, phase=0.0):
    t = np.arange(int(round(seconds * fs))) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


def dft_peak(x, fs):
    """(frequency, amplitude) of the largest positive-frequency component."""
    spec = np.fft.rfft(x * np.hanning(len(x)))
    freqs = np.fft.rfftfreq(len(x), 1 / fs)
    k = np.abs(spec[1:]).argmax() + 1
    # Hann coherent gain is 0.5
    return freqs[k], 2 * np.abs(spec[k]) / (len(x) * 0.5)


class TestResample:
    def test_equal_rates_identity(self):
        x = np.random.default_rng(0).standard_normal((2, 64))
        y = resample(x, 128, 128)
        np.testing.assert_array_equal(y, x)
        assert y is not x  # a copy, not an alias

    def test_four_to_one_preserves_tone(self):
        x = tone(10.0, 512, 8.0)
        y = resample(x, 512, 128)
        assert y.shape == (128 * 8,)
        mid = y[128:-128]  # skip filter edge effects
        f, a = dft_peak(mid, 128)
        assert abs(f - 10.0) < 0.2
        assert abs(a - 1.0) < 0.02

    def test_rejects_high_band_above_new_nyquist(self):
        # an 80 Hz tone cannot survive a downsample to 128 Hz (Nyquist 64)
        x = tone(80.0, 512, 4.0)
        y = resample(x, 512, 128)
        assert np.abs(y[64:-64]).max() < 0.01

    def test_multichannel_last_axis(self):
        x = np.stack([tone(5.0, 256, 2.0), tone(20.0, 256, 2.0)])
        y = resample(x, 256, 128)
        assert y.shape == (2, 256)

    def test_bad_rate_raises(self):
        with pytest.raises(ConfigError):
            resample(np.zeros(16), 0, 128)


class TestBandpass:
    def test_passband_tone_survives(self):
        x = tone(10.0, 128, 8.0)
        y = bandpass(x, 128, 1.0, 45.0)
        f, a = dft_peak(y[128:-128], 128)
        assert abs(f - 10.0) < 0.2
        assert a > 0.95

    def test_stopband_tone_dies(self):
        x = tone(55.0, 128, 8.0)
        y = bandpass(x, 128, 1.0, 45.0)
        assert np.abs(y[128:-128]).max() < 0.05

    def test_zero_phase(self):
        # forward-backward filtering leaves an in-band tone unshifted
        x = tone(8.0, 128, 8.0)
        y = bandpass(x, 128, 1.0, 45.0)
        mid = slice(256, -256)
        lagspan = 32
        xc = [
            np.dot(x[mid], np.roll(y, lag)[mid]) for lag in range(-lagspan, lagspan + 1)
        ]
        assert int(np.argmax(xc)) - lagspan == 0

    def test_bad_corners_raise(self):
        with pytest.raises(ConfigError):
            bandpass(np.zeros(64), 128, 45.0, 1.0)
        with pytest.raises(ConfigError):
            bandpass(np.zeros(64), 128, 1.0, 70.0)


class TestBaselineAndWindows:
    def test_baseline_mean_subtracted_and_dropped(self):
        fs = 10.0
        x = np.concatenate([np.full(30, 5.0), np.full(40, 7.0)])[None]
        y = remove_baseline(x, fs, 3.0)
        assert y.shape == (1, 40)
        np.testing.assert_allclose(y, 2.0)

    def test_baseline_longer_than_signal_raises(self):
        with pytest.raises(ShapeError):
            remove_baseline(np.zeros(10), 10.0, 2.0)

    def test_window_count_for_sixty_seconds(self):
        fs = 128.0
        x = np.zeros((32, int(60 * fs)))
        w = split_windows(x, fs, 6.0, 3.0)
        assert w.shape == (19, 32, 768)

    def test_tail_shorter_than_window_dropped(self):
        x = np.zeros(100)
        w = split_windows(x, 10.0, 3.0, 1.0)
        # windows start every 2 s: 0,2,4,6 s -> 4 windows; 10th second unused
        assert w.shape == (4, 30)

    def test_signal_shorter_than_window_raises(self):
        with pytest.raises(ShapeError):
            split_windows(np.zeros(10), 10.0, 2.0, 1.0)


class TestBandPower:
    def test_band_edges_are_contiguous(self):
        for (_, _, hi), (_, lo, _) in zip(BANDS[:-1], BANDS[1:]):
            assert hi == lo
        assert BANDS[0][1] == 1.0 and BANDS[-1][2] == 45.0

    @pytest.mark.parametrize(
        "freq,band_idx",
        [(2.0, 0), (6.0, 1), (10.0, 2), (16.0, 3), (30.0, 4), (2.5, 0), (13.0, 3)],
    )
    def test_tone_power_lands_in_its_band(self, freq, band_idx):
        x = tone(freq, 128, 1.0, amp=2.0)
        p = band_power(x, 128)
        assert p.shape == (5,)
        frac = p[band_idx] / p.sum()
        assert frac > 0.95, f"{freq} Hz tone: only {frac:.3f} of power in band {band_idx}"

    def test_tone_power_magnitude(self):
        # a sin of amplitude A carries power A^2/2
        x = tone(10.0, 128, 4.0, amp=3.0)
        p = band_power(x, 128)
        assert abs(p[2] - 4.5) / 4.5 < 0.05

    def test_total_equals_sum_of_bands(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(512)
        p = band_power(x, 128)
        import scipy.signal as sps

        freqs, psd = sps.welch(
            x, fs=128, window="hann", nperseg=128, noverlap=64, detrend="constant"
        )
        sel = (freqs >= 1.0) & (freqs < 45.0)
        np.testing.assert_allclose(p.sum(), psd[sel].sum() * (freqs[1] - freqs[0]), rtol=1e-10)

    def test_leading_axes_pass_through(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 4, 128))
        p = band_power(x, 128)
        assert p.shape == (3, 4, 5)
        np.testing.assert_allclose(p[1, 2], band_power(x[1, 2], 128))


class TestPreprocessTrial:
    def test_shapes_from_raw_rates(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((32, int(63 * 512)))
        out = preprocess_trial(x, 512.0)
        assert out.shape == (19, 6, 32, 5)
        assert out.dtype == np.float32
        assert np.isfinite(out).all()
        assert (out >= 0).all()

    def test_class_signature_visible_after_pipeline(self):
        # alpha-heavy channel vs beta-heavy channel must separate per band
        fs = 512.0
        n = int(63 * fs)
        t = np.arange(n) / fs
        a = 3.0 * np.sin(2 * np.pi * 10.0 * t)
        b = 3.0 * np.sin(2 * np.pi * 16.0 * t)
        x = np.stack([a, b])
        out = preprocess_trial(x, fs)
        alpha_a, beta_a = out[..., 0, 2].mean(), out[..., 0, 3].mean()
        alpha_b, beta_b = out[..., 1, 2].mean(), out[..., 1, 3].mean()
        assert alpha_a > 10 * beta_a
        assert beta_b > 10 * alpha_b

    def test_log_power_option(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, int(10 * 128)))
        cfg = PreprocessConfig(baseline_seconds=1.0, log_power=True)
        out = preprocess_trial(x, 128.0, cfg)
        assert (out <= 12).all()  # log10 scale

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            PreprocessConfig(bandpass_high=80.0).validate()
        with pytest.raises(ConfigError):
            PreprocessConfig(overlap_seconds=6.0).validate()
        with pytest.raises(ConfigError):
            PreprocessConfig(window_seconds=5.5).validate()
