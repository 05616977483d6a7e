"""EEG preprocessing: rate conversion, bandpass, windowing, band power.

The pipeline mirrors common practice for affect datasets: drop a pre-trial
baseline after subtracting its per-channel mean, resample to a working rate,
zero-phase bandpass, slice into overlapping analysis windows, then reduce
each one-second subsegment to per-channel power in five classical bands.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .errors import ConfigError, ShapeError

# (name, low_hz, high_hz); half-open [low, high), contiguous from 1 to 45 Hz
BANDS: tuple[tuple[str, float, float], ...] = (
    ("delta", 1.0, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 12.0),
    ("beta", 12.0, 20.0),
    ("gamma", 20.0, 45.0),
)

BAND_NAMES = tuple(name for name, _, _ in BANDS)
N_BANDS = len(BANDS)


@dataclass(frozen=True)
class PreprocessConfig:
    """Knobs for :func:`preprocess_trial`. Defaults follow the 128 Hz,
    6 s window / 3 s overlap, six 1 s subsegment regime."""

    target_fs: float = 128.0
    baseline_seconds: float = 3.0
    bandpass_low: float = 1.0
    bandpass_high: float = 45.0
    filter_order: int = 4
    window_seconds: float = 6.0
    overlap_seconds: float = 3.0
    subsegment_seconds: float = 1.0
    log_power: bool = False

    def validate(self) -> None:
        if self.target_fs <= 0:
            raise ConfigError(f"target_fs must be positive, got {self.target_fs}")
        if not 0 < self.bandpass_low < self.bandpass_high:
            raise ConfigError(
                f"bad bandpass corners ({self.bandpass_low}, {self.bandpass_high})"
            )
        if self.bandpass_high >= self.target_fs / 2:
            raise ConfigError(
                f"bandpass high corner {self.bandpass_high} Hz needs fs > "
                f"{2 * self.bandpass_high} Hz, got {self.target_fs}"
            )
        if self.filter_order < 1:
            raise ConfigError(f"filter_order must be >= 1, got {self.filter_order}")
        if self.overlap_seconds >= self.window_seconds:
            raise ConfigError("overlap must be shorter than the window")
        if self.subsegment_seconds <= 0 or self.window_seconds <= 0:
            raise ConfigError("window and subsegment lengths must be positive")
        n_sub = self.window_seconds / self.subsegment_seconds
        if abs(n_sub - round(n_sub)) > 1e-9:
            raise ConfigError(
                f"window {self.window_seconds}s must hold a whole number of "
                f"{self.subsegment_seconds}s subsegments"
            )


def _check_signal(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise ShapeError(f"expected (n,) or (channels, n) signal, got shape {x.shape}")
    return x


def resample(x: np.ndarray, fs_in: float, fs_out: float) -> np.ndarray:
    """Polyphase rate conversion with a Kaiser windowed-sinc lowpass.

    The rate ratio must be rational within 1/1000 Hz. Works along the last
    axis; equal rates return an unmodified copy.
    """
    x = _check_signal(x)
    if fs_in <= 0 or fs_out <= 0:
        raise ConfigError(f"sampling rates must be positive, got {fs_in}, {fs_out}")
    frac = Fraction(int(round(fs_out * 1000)), int(round(fs_in * 1000)))
    up, down = frac.numerator, frac.denominator
    if up == down:
        return x.copy()
    return sps.resample_poly(x, up, down, axis=-1, window=("kaiser", 5.0))


def bandpass(
    x: np.ndarray, fs: float, low: float, high: float, order: int = 4
) -> np.ndarray:
    """Zero-phase Butterworth bandpass (forward-backward, no group delay)."""
    x = _check_signal(x)
    if not 0 < low < high < fs / 2:
        raise ConfigError(
            f"bandpass corners ({low}, {high}) must satisfy 0 < low < high < fs/2 = {fs / 2}"
        )
    sos = sps.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")
    return sps.sosfiltfilt(sos, x, axis=-1)


def remove_baseline(x: np.ndarray, fs: float, baseline_seconds: float) -> np.ndarray:
    """Subtract the per-channel mean of the leading baseline interval, then
    drop those samples."""
    x = _check_signal(x)
    nb = int(round(baseline_seconds * fs))
    if nb <= 0:
        return x.copy()
    if nb >= x.shape[-1]:
        raise ShapeError(
            f"baseline of {nb} samples swallows the whole {x.shape[-1]}-sample signal"
        )
    mean = x[..., :nb].mean(axis=-1, keepdims=True)
    return x[..., nb:] - mean


def split_windows(
    x: np.ndarray, fs: float, window_seconds: float, overlap_seconds: float
) -> np.ndarray:
    """Slice into overlapping windows along time; returns (W, ..., win_n).
    A trailing remainder shorter than one window is dropped."""
    x = _check_signal(x)
    win = int(round(window_seconds * fs))
    step = int(round((window_seconds - overlap_seconds) * fs))
    if win < 1 or step < 1:
        raise ConfigError("window and step must each cover at least one sample")
    n = x.shape[-1]
    if n < win:
        raise ShapeError(f"signal of {n} samples is shorter than one {win}-sample window")
    count = (n - win) // step + 1
    out = np.stack([x[..., i * step : i * step + win] for i in range(count)], axis=0)
    return out


def band_power(x: np.ndarray, fs: float, nperseg: int = 128) -> np.ndarray:
    """Per-band power via a Hann Welch PSD, rectangle-integrated over the
    half-open band intervals.

    ``nperseg`` fixes the resolution bandwidth; 128 samples at 128 Hz gives
    1 Hz bins, narrow enough that a pure tone's spectral leakage (one bin to
    each side of the peak) stays inside its band for every band here. Longer
    signals Welch-average 50%-overlapped segments. Reduces the last (time)
    axis to 5 band powers; leading axes pass through.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise ShapeError(f"band_power needs at least 2 samples, got {n}")
    seg = min(nperseg, n)
    freqs, psd = sps.welch(
        x, fs=fs, window="hann", nperseg=seg, noverlap=seg // 2, detrend="constant"
    )
    df = freqs[1] - freqs[0]
    out = np.empty(x.shape[:-1] + (N_BANDS,), dtype=np.float64)
    for bi, (_, lo, hi) in enumerate(BANDS):
        sel = (freqs >= lo) & (freqs < hi)
        out[..., bi] = psd[..., sel].sum(axis=-1) * df
    return out


def preprocess_trial(
    x: np.ndarray, fs: float, cfg: PreprocessConfig | None = None
) -> np.ndarray:
    """Full per-trial pipeline; returns float32 (windows, subsegments,
    channels, bands) band powers."""
    cfg = cfg or PreprocessConfig()
    cfg.validate()
    x = _check_signal(x)
    if x.ndim != 2:
        raise ShapeError(f"preprocess_trial expects (channels, n), got {x.shape}")
    x = remove_baseline(x, fs, cfg.baseline_seconds)
    x = resample(x, fs, cfg.target_fs)
    x = bandpass(x, cfg.target_fs, cfg.bandpass_low, cfg.bandpass_high, cfg.filter_order)
    windows = split_windows(x, cfg.target_fs, cfg.window_seconds, cfg.overlap_seconds)
    sub_n = int(round(cfg.subsegment_seconds * cfg.target_fs))
    n_sub = windows.shape[-1] // sub_n
    w, c = windows.shape[0], windows.shape[1]
    subs = windows[..., : n_sub * sub_n].reshape(w, c, n_sub, sub_n)
    powers = band_power(subs, cfg.target_fs)  # (W, C, S, 5)
    powers = np.moveaxis(powers, 2, 1)  # (W, S, C, 5)
    if cfg.log_power:
        powers = np.log10(np.maximum(powers, 1e-12))
    return powers.astype(np.float32)
