"""Fixed log mel-filterbank features, used as a baseline and as an oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .filter_init import mel_grid
from .frontend import FeatureMap, frontend_forward, instance_norm, n_frames
from .signal_io import Waveform, normalize_sequence
from .tensor_core import ContractError, InputTooShortError


@dataclass(frozen=True)
class MelConfig:
    n_filters: int = 40
    win: int = 400
    hop: int = 160
    fft_size: int = 512
    sample_rate: int = 16000
    log_offset: float = 1.0

    def __post_init__(self):
        if self.fft_size < self.win:
            raise ContractError(f"fft_size {self.fft_size} < window {self.win}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


def hanning(width: int) -> np.ndarray:
    """Symmetric Hanning window; its square is ``filter_init.squared_hanning``."""
    n = np.arange(width)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / (width - 1))


def stft_power(wave, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """``|DFT|^2`` of Hanning-windowed frames, shape ``[fft_size // 2 + 1, frames]``."""
    x = np.asarray(wave.samples if isinstance(wave, Waveform) else wave, dtype=np.float64)
    if x.size < cfg.win:
        raise InputTooShortError(x.size, cfg.win, "waveform")
    frames = sliding_window_view(x, cfg.win)[::cfg.hop] * hanning(cfg.win)
    spec = np.fft.rfft(frames, cfg.fft_size, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def mel_matrix(cfg: MelConfig = MelConfig()) -> np.ndarray:
    """``[n_filters, n_bins]`` peak-normalized triangles on the mel grid."""
    edges = mel_grid(cfg.n_filters, 0.0, cfg.sample_rate / 2, cfg.sample_rate).band_edges
    f = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.fft_size
    left, center, right = (edges[:, i:i + 1] for i in range(3))
    up = (f - left) / (center - left)
    down = (right - f) / (right - center)
    return np.clip(np.minimum(up, down), 0.0, None)


def mel_apply(power, cfg: MelConfig = MelConfig()) -> np.ndarray:
    power = np.asarray(power, dtype=np.float64)
    if power.ndim != 2 or power.shape[0] != cfg.n_bins:
        raise ContractError(f"power must be [{cfg.n_bins}, frames], got {power.shape}")
    return np.log(cfg.log_offset + mel_matrix(cfg) @ power)


def log_mel(wave, cfg: MelConfig = MelConfig(), normalize: bool = True) -> FeatureMap:
    """Log mel features, instance-normalized per channel unless `normalize` is off."""
    feats = mel_apply(stft_power(wave, cfg), cfg)
    return FeatureMap(instance_norm(feats) if normalize else feats)


def mel_frames(length: int, cfg: MelConfig = MelConfig()) -> int:
    return n_frames(length, cfg.win, cfg.hop)


# The front-end's frame m sees samples [160 m, 160 m + 798] (conv then
# low-pass, both 400 wide), centred on 160 m + 399; a mel frame is centred on
# 160 m + 199.5. Dropping this many leading samples lines the two up.
FRONTEND_DELAY = 200


def aligned_pair(wave, params, config, cfg: MelConfig = MelConfig()):
    """Front-end features and log-mel features of `wave` on a common time grid.

    Both pipelines see the sequence-normalized waveform; the mel input is
    advanced by :data:`FRONTEND_DELAY` samples and both maps are cut to the
    shorter frame count. Returns two ``[40, frames]`` arrays.
    """
    w = wave if isinstance(wave, Waveform) else Waveform(wave)
    fmap, _ = frontend_forward(w, params, config)
    x = normalize_sequence(w).samples
    offset = FRONTEND_DELAY + (1 if config.use_pre_emphasis else 0)
    mel = log_mel(x[offset:], cfg, normalize=config.use_instance_norm).values
    n = min(fmap.frames, mel.shape[1])
    return fmap.values[:, :n], mel[:, :n]


def channel_correlation(a, b) -> np.ndarray:
    """Pearson correlation of matching rows of `a` and `b` (0 for a constant row)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    den = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (a * b).sum(axis=1) / den
    return np.where(den > 0, r, 0.0)
