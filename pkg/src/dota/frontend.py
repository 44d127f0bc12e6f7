"""Waveform to stacked log-mel features.

The model consumes fixed-length instances: the waveform is padded or
truncated to ``audio_seconds`` (30 s by default, 480000 samples), windowed
with a periodic Hann of 25 ms every 10 ms with no centering (frame t covers
samples [160t, 160t+400); the last frames read into the zero pad), passed
through a 512-point FFT power spectrum and an 80-band Slaney-style mel
filterbank, floored and logged. Consecutive frames are then stacked k at a
time, shortening the sequence by k and widening each frame to 80k.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    audio_seconds: float = 30.0
    n_mels: int = 80
    win_length: int = 400
    hop_length: int = 160
    n_fft: int = 512
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    # per-instance scaling: clamp to [max-8, max], then (x+4)/4
    normalize: bool = True

    def __post_init__(self):
        if self.n_fft < self.win_length:
            raise ValueError("n_fft must be at least win_length")
        if self.n_samples % self.hop_length != 0:
            raise ValueError("audio length must be a whole number of hops")

    @property
    def n_samples(self) -> int:
        return round(self.sample_rate * self.audio_seconds)

    @property
    def n_frames(self) -> int:
        return self.n_samples // self.hop_length


def pad_or_truncate(w: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Force a 16 kHz waveform to exactly ``cfg.n_samples`` samples."""
    w = np.asarray(w, dtype=np.float64).ravel()
    n = cfg.n_samples
    if len(w) >= n:
        return w[:n].copy()
    out = np.zeros(n, dtype=np.float64)
    out[: len(w)] = w
    return out


@functools.lru_cache(maxsize=4)
def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (sums to 1 at 50% overlap)."""
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def _hz_to_mel(f):
    # linear below 1 kHz, logarithmic above
    f = np.asarray(f, dtype=np.float64)
    log_step = np.log(6.4) / 27.0
    return np.where(f < 1000.0, 3.0 * f / 200.0, 15.0 + np.log(np.maximum(f, 1000.0) / 1000.0) / log_step)


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    log_step = np.log(6.4) / 27.0
    return np.where(m < 15.0, 200.0 * m / 3.0, 1000.0 * np.exp(log_step * (m - 15.0)))


@functools.lru_cache(maxsize=4)
def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular, area-normalized mel filterbank, shape (n_mels, n_fft//2+1)."""
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    mel_pts = np.linspace(_hz_to_mel(cfg.fmin), _hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins), dtype=np.float64)
    for m in range(cfg.n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - lo) / (ctr - lo)
        down = (hi - fft_freqs) / (hi - ctr)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        fb[m] *= 2.0 / (hi - lo)  # area normalization
    fb.setflags(write=False)
    return fb


def frame_signal(w: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Slice the padded waveform into (n_frames, win_length) windows."""
    pad = cfg.win_length - cfg.hop_length
    x = np.concatenate([w, np.zeros(pad, dtype=np.float64)])
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.win_length)[:: cfg.hop_length]
    return frames[: cfg.n_frames]


def log_mel(w: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Raw log-mel features of a fixed-length waveform, (n_frames, n_mels).

    Natural log with floor ``cfg.log_floor``; no per-instance scaling here
    (see :func:`normalize_features`).
    """
    w = np.asarray(w, dtype=np.float64)
    if len(w) != cfg.n_samples:
        raise ValueError(f"expected {cfg.n_samples} samples, got {len(w)}")
    frames = frame_signal(w, cfg) * hann_window(cfg.win_length)
    spec = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    mel = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.log_floor))


def normalize_features(m: np.ndarray) -> np.ndarray:
    """Per-instance scaling: subtract the global max, clamp 8 below it, and
    map affinely into [-1, 1] (roughly zero mean on speech)."""
    x = np.maximum(m - m.max(), -8.0)
    return (x + 4.0) / 4.0


def stack_frames(m: np.ndarray, k: int) -> np.ndarray:
    """Concatenate every k consecutive rows into one, (n/k, d*k)."""
    m = np.asarray(m)
    n, d = m.shape
    if k < 1 or n % k != 0:
        raise ValueError(f"frame count {n} not divisible by stack factor {k}")
    return m.reshape(n // k, d * k)


def unstack_frames(s: np.ndarray, k: int) -> np.ndarray:
    """Exact inverse of :func:`stack_frames`."""
    s = np.asarray(s)
    n, dk = s.shape
    if k < 1 or dk % k != 0:
        raise ValueError(f"frame width {dk} not divisible by stack factor {k}")
    return s.reshape(n * k, dk // k)


def features(w: np.ndarray, cfg: FrontendConfig, stack_factor: int) -> np.ndarray:
    """Full frontend: pad/truncate, log-mel, optional scaling, stacking."""
    m = log_mel(pad_or_truncate(w, cfg), cfg)
    if cfg.normalize:
        m = normalize_features(m)
    return stack_frames(m, stack_factor)


def write_features(path, m: np.ndarray) -> None:
    """Feature dump: u32 rows, u32 cols, then row-major little-endian f32."""
    m = np.ascontiguousarray(m, dtype="<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", m.shape[0], m.shape[1]))
        f.write(m.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as f:
        rows, cols = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != rows * cols:
        raise ValueError(f"{path}: truncated feature dump")
    return data.reshape(rows, cols).astype(np.float64)
