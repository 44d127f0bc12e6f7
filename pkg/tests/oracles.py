"""Independent brute-force reference implementations used by the tests.

These deliberately avoid the production code paths: the spectrogram oracle
uses an explicit O(N^2) DFT matrix and a per-point triangle filterbank, the
resampling oracle does zero-stuffed direct convolution, and the edit
distance oracle is a plain rolling-array DP.
"""

import numpy as np

from dota.frontend import FrontendConfig


def dft_matrices(n_fft: int):
    k = np.arange(n_fft // 2 + 1)[:, None]
    t = np.arange(n_fft)[None, :]
    cos = np.cos(-2.0 * np.pi * k * t / n_fft)
    sin = np.sin(-2.0 * np.pi * k * t / n_fft)
    return cos, sin


def naive_power_spectrum(frames: np.ndarray, n_fft: int) -> np.ndarray:
    """|DFT|^2 of zero-padded frames via explicit cos/sin sums."""
    cos, sin = dft_matrices(n_fft)
    padded = np.zeros((frames.shape[0], n_fft))
    padded[:, : frames.shape[1]] = frames
    re = padded @ cos.T
    im = padded @ sin.T
    return re * re + im * im


def naive_mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    def hz_to_mel(f):
        return 3.0 * f / 200.0 if f < 1000.0 else 15.0 + 27.0 * np.log(f / 1000.0) / np.log(6.4)

    def mel_to_hz(m):
        return 200.0 * m / 3.0 if m < 15.0 else 1000.0 * np.exp(np.log(6.4) * (m - 15.0) / 27.0)

    lo_mel, hi_mel = hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax)
    pts = [mel_to_hz(lo_mel + (hi_mel - lo_mel) * i / (cfg.n_mels + 1)) for i in range(cfg.n_mels + 2)]
    n_bins = cfg.n_fft // 2 + 1
    freqs = [b * cfg.sample_rate / cfg.n_fft for b in range(n_bins)]
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, ctr, hi = pts[m], pts[m + 1], pts[m + 2]
        for b, f in enumerate(freqs):
            if lo <= f <= ctr and ctr > lo:
                v = (f - lo) / (ctr - lo)
            elif ctr < f <= hi and hi > ctr:
                v = (hi - f) / (hi - ctr)
            else:
                v = 0.0
            fb[m, b] = v * 2.0 / (hi - lo)
    return fb


def naive_log_mel(w: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Reference log-mel for a fixed-length waveform."""
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(cfg.win_length) / cfg.win_length)
    xp = np.concatenate([w, np.zeros(cfg.win_length - cfg.hop_length)])
    frames = np.stack(
        [xp[i * cfg.hop_length : i * cfg.hop_length + cfg.win_length] for i in range(cfg.n_frames)]
    )
    power = naive_power_spectrum(frames * win, cfg.n_fft)
    mel = power @ naive_mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.log_floor))


def naive_resample(x: np.ndarray, h: np.ndarray, up: int, down: int) -> np.ndarray:
    """Zero-stuff + direct convolution + scipy-compatible alignment trim.

    ``h`` is the unit-gain prototype filter (before the interpolation gain).
    """
    h = h * up
    half_len = (len(h) - 1) // 2
    n_out = -(-len(x) * up // down)  # ceil
    n_pre_pad = down - half_len % down
    n_pre_remove = (half_len + n_pre_pad) // down
    hp = np.concatenate([np.zeros(n_pre_pad), h])
    x_up = np.zeros(len(x) * up)
    x_up[::up] = x
    full = np.convolve(hp, x_up)
    strided = full[::down]
    return strided[n_pre_remove : n_pre_remove + n_out]


def naive_edit_distance(a: list, b: list) -> int:
    """Word-level Levenshtein distance, rolling-array DP."""
    prev = list(range(len(b) + 1))
    for i, wa in enumerate(a, start=1):
        cur = [i]
        for j, wb in enumerate(b, start=1):
            cur.append(min(prev[j - 1] + (wa != wb), prev[j] + 1, cur[-1] + 1))
        prev = cur
    return prev[-1]


def dominant_frequency(x: np.ndarray, sr: int = 16000) -> float:
    spec = np.abs(np.fft.rfft(x))
    spec[0] = 0.0
    return float(np.argmax(spec)) * sr / len(x)
