"""Waveform-to-feature-grid conversion: log-compressed STFT magnitudes.

Frames are fully inside the signal (no centering or padding), analyzed with
a Hann window.  An optional mel projection can be enabled through
``FeatureConfig.mel_bins``; it is off by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dataio import Clip


@dataclass
class FeatureConfig:
    sample_rate: int = 16000
    window: int = 2048
    hop: int = 255
    mel_bins: int = 0  # 0 disables the mel stage


@dataclass
class FeatureGrid:
    """T x F matrix of frame features plus the framing parameters."""

    values: np.ndarray
    frame_hop: int
    frame_window: int
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def frame_count(n_samples: int, window: int, hop: int) -> int:
    """Number of full analysis windows: floor((n - window)/hop) + 1, or 0."""
    if window <= 0 or hop <= 0:
        raise ValueError("window and hop must be positive")
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def feature_frames_for_time(t_seconds: float, hop: int, rate: int) -> int:
    """Frame index whose start time covers t: floor(t * rate / hop)."""
    if t_seconds < 0:
        raise ValueError("time must be nonnegative")
    return int(np.floor(t_seconds * rate / hop))


def frame_start_time(frame_idx: int, hop: int, rate: int) -> float:
    return frame_idx * hop / rate


def _raw_magnitudes(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    t = frame_count(len(samples), window, hop)
    if t == 0:
        return np.zeros((0, window // 2 + 1))
    idx = np.arange(window)[None, :] + hop * np.arange(t)[:, None]
    frames = np.asarray(samples, dtype=np.float64)[idx]
    frames = frames * np.hanning(window)[None, :]
    return np.abs(np.fft.rfft(frames, axis=1))


def stft_magnitude(clip: Clip, window: int = 2048, hop: int = 255, compress: bool = True) -> FeatureGrid:
    """Short-time Fourier magnitude grid, log(1 + x) compressed by default."""
    mags = _raw_magnitudes(clip.samples, window, hop)
    if compress:
        mags = np.log1p(mags)
    return FeatureGrid(mags, hop, window, clip.sample_rate)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filterbank, shape (n_fft//2 + 1, n_mels)."""
    if fmax is None:
        fmax = sample_rate / 2.0
    n_bins = n_fft // 2 + 1
    bin_freqs = np.arange(n_bins) * sample_rate / n_fft
    mel_pts = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((n_bins, n_mels))
    for m in range(n_mels):
        left, center, right = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - left) / max(center - left, 1e-12)
        down = (right - bin_freqs) / max(right - center, 1e-12)
        fb[:, m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def extract_features(clip: Clip, cfg: FeatureConfig) -> FeatureGrid:
    """Feature grid per config: raw STFT magnitudes, optional mel, then log1p."""
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} != feature config rate {cfg.sample_rate}")
    mags = _raw_magnitudes(clip.samples, cfg.window, cfg.hop)
    if cfg.mel_bins:
        mags = mags @ mel_filterbank(cfg.sample_rate, cfg.window, cfg.mel_bins)
    return FeatureGrid(np.log1p(mags), cfg.hop, cfg.window, cfg.sample_rate)


def feature_dim(cfg: FeatureConfig) -> int:
    return cfg.mel_bins if cfg.mel_bins else cfg.window // 2 + 1
