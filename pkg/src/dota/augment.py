"""Stochastic waveform augmentation and training-instance assembly.

Each record independently draws four coins: speed perturbation (resampled
playback, pitch shifts with rate), tempo perturbation (overlap-add time
stretch, pitch preserved), a single-pole lowpass, and synthetic
reverberation. Instances are then grown to the full input length by
repeatedly either concatenating the next record from the stream (p_concat)
or zero-padding to the end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .resample import resample_by


@dataclass(frozen=True)
class AugmentConfig:
    p_speed: float = 1e-3
    p_tempo: float = 0.2
    p_lowpass: float = 1e-3
    p_reverb: float = 1e-3
    factor_min: float = 0.9
    factor_max: float = 1.1
    p_concat: float = 0.25
    lowpass_pole_min: float = 0.5
    lowpass_pole_max: float = 0.95
    reverb_t60_min: float = 0.1
    reverb_t60_max: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("p_speed", "p_tempo", "p_lowpass", "p_reverb", "p_concat"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if not 0.0 < self.factor_min <= self.factor_max:
            raise ValueError("factor range must be positive and ordered")


@dataclass(frozen=True)
class AugmentPlan:
    """Concrete outcome of the per-record augmentation coin flips."""

    speed_factor: float | None = None
    tempo_factor: float | None = None
    lowpass_pole: float | None = None
    reverb_t60: float | None = None


def sample_plan(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentPlan:
    """Draw the four augmentation decisions for one record."""
    speed = rng.uniform(cfg.factor_min, cfg.factor_max) if rng.random() < cfg.p_speed else None
    tempo = rng.uniform(cfg.factor_min, cfg.factor_max) if rng.random() < cfg.p_tempo else None
    pole = rng.uniform(cfg.lowpass_pole_min, cfg.lowpass_pole_max) if rng.random() < cfg.p_lowpass else None
    t60 = rng.uniform(cfg.reverb_t60_min, cfg.reverb_t60_max) if rng.random() < cfg.p_reverb else None
    return AugmentPlan(speed_factor=speed, tempo_factor=tempo, lowpass_pole=pole, reverb_t60=t60)


def speed_perturb(w: np.ndarray, factor: float) -> np.ndarray:
    """Change playback speed by ``factor``; pitch scales with it.

    Output length is len(w)/factor within one sample.
    """
    return resample_by(np.asarray(w, dtype=np.float64), 1.0 / factor)


def tempo_perturb(w: np.ndarray, factor: float, sample_rate: int = 16000) -> np.ndarray:
    """Time-stretch by ``factor`` without changing pitch.

    Waveform-similarity overlap-add: 30 ms analysis windows on a uniform
    synthesis grid, each analysis segment shifted within a small search
    range to maximize cross-correlation with the natural continuation of
    the previous segment. Output length is len(w)/factor within 2%.
    """
    x = np.asarray(w, dtype=np.float64)
    win = int(round(0.030 * sample_rate))
    hop = win // 2
    search = win // 4
    n_out = int(round(len(x) / factor))
    if len(x) <= win or n_out <= win:
        return x.copy()

    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    # pad covers the furthest read: src <= len(x)-1, plus hop+win lookahead
    xp = np.concatenate([x, np.zeros(win + hop + search, dtype=np.float64)])
    y = np.zeros(n_out + win, dtype=np.float64)
    wsum = np.zeros_like(y)

    n_frames = n_out // hop + 1
    prev_src = 0
    for k in range(n_frames):
        nominal = int(round(k * hop * factor))
        nominal = min(nominal, len(x) - 1)
        if k == 0:
            src = 0
        else:
            # segment that would seamlessly continue the previous output frame
            target = xp[prev_src + hop : prev_src + hop + win]
            lo = max(0, nominal - search)
            hi = min(len(x) - 1, nominal + search)
            segs = np.lib.stride_tricks.sliding_window_view(xp[lo : hi + win], win)[: hi - lo + 1]
            src = lo + int(np.argmax(segs @ target))
        out_pos = k * hop
        y[out_pos : out_pos + win] += window * xp[src : src + win]
        wsum[out_pos : out_pos + win] += window
        prev_src = src

    y = y[:n_out]
    wsum = wsum[:n_out]
    nz = wsum > 1e-8
    y[nz] /= wsum[nz]
    return y


def lowpass(w: np.ndarray, pole: float) -> np.ndarray:
    """First-order IIR smoother y[n] = pole*y[n-1] + (1-pole)*x[n].

    Unity gain at DC; high frequencies attenuated. Same length as input.
    """
    if not 0.0 <= pole < 1.0:
        raise ValueError(f"pole must be in [0, 1), got {pole}")
    return lfilter([1.0 - pole], [1.0, -pole], np.asarray(w, dtype=np.float64))


def make_reverb_ir(t60: float, rng: np.random.Generator, sample_rate: int = 16000) -> np.ndarray:
    """Exponentially decaying noise impulse response, unit direct path.

    Amplitude decays by 60 dB over ``t60`` seconds.
    """
    n = max(1, int(round(t60 * sample_rate)))
    t = np.arange(n) / sample_rate
    ir = rng.standard_normal(n) * np.exp(-6.908 * t / t60)
    ir[0] = 1.0
    return ir


def reverb(w: np.ndarray, t60: float, rng: np.random.Generator) -> np.ndarray:
    """Convolve with a synthetic room response, truncated to the input
    length and renormalized so the output peak matches the input peak."""
    x = np.asarray(w, dtype=np.float64)
    if len(x) == 0:
        return x.copy()
    ir = make_reverb_ir(t60, rng)
    y = fftconvolve(x, ir)[: len(x)]
    peak_in = np.max(np.abs(x))
    peak_out = np.max(np.abs(y))
    if peak_out > 0.0:
        y *= peak_in / peak_out
    return y


def apply_plan(w: np.ndarray, plan: AugmentPlan, rng: np.random.Generator) -> np.ndarray:
    """Apply an augmentation plan; ``rng`` only drives the reverb noise."""
    x = np.asarray(w, dtype=np.float64)
    if plan.speed_factor is not None:
        x = speed_perturb(x, plan.speed_factor)
    if plan.tempo_factor is not None:
        x = tempo_perturb(x, plan.tempo_factor)
    if plan.lowpass_pole is not None:
        x = lowpass(x, plan.lowpass_pole)
    if plan.reverb_t60 is not None:
        x = reverb(x, plan.reverb_t60, rng)
    return x


def augment_record(w: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    return apply_plan(w, sample_plan(cfg, rng), rng)


def assemble_instance(
    stream, cfg: AugmentConfig, rng: np.random.Generator, n_samples: int = 480000
) -> tuple[np.ndarray, list[str]]:
    """Build one fixed-length training instance from a record stream.

    The first record is taken unconditionally; afterwards, while the
    instance is short, the next record is concatenated with probability
    ``p_concat``, otherwise the instance is zero-padded to full length and
    closed. Audio is float in [-1, 1]; a record whose audio is cut by the
    length limit contributes no transcript. Raises StopIteration on an
    empty stream.
    """
    record = next(stream)
    parts: list[np.ndarray] = []
    texts: list[str] = []
    ends: list[int] = []
    total = 0
    while True:
        audio = augment_record(record.audio.astype(np.float64) / 32768.0, cfg, rng)
        parts.append(audio)
        texts.append(record.transcript)
        total += len(audio)
        ends.append(total)
        if total >= n_samples:
            break
        if rng.random() < cfg.p_concat:
            try:
                record = next(stream)
                continue
            except StopIteration:
                pass
        parts.append(np.zeros(n_samples - total, dtype=np.float64))
        break
    wave = np.concatenate(parts)[:n_samples]
    transcripts = [t for t, end in zip(texts, ends) if end <= n_samples]
    return wave, transcripts
