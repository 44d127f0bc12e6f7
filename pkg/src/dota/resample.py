"""Polyphase sample-rate conversion with a Kaiser-windowed sinc filter.

One resampler serves both archive ingestion (arbitrary source rate to
16 kHz) and speed perturbation (fractional playback-rate changes). The
filter is an explicit windowed sinc, 32 taps per polyphase branch, so a
naive direct-convolution oracle can reproduce the output exactly.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

TAPS_PER_PHASE = 32
KAISER_BETA = 8.555  # ~85 dB stopband attenuation


def design_filter(up: int, down: int) -> np.ndarray:
    """Anti-aliasing/interpolation lowpass for a rate change of up/down.

    Cutoff sits at the narrower of the two Nyquist limits (relative to the
    intermediate rate ``fs * up``), ``TAPS_PER_PHASE`` taps per phase, unit
    DC gain. Odd length, symmetric (linear phase).
    """
    if up < 1 or down < 1:
        raise ValueError("rate factors must be positive integers")
    max_rate = max(up, down)
    half_len = (TAPS_PER_PHASE // 2) * max_rate
    cutoff = 1.0 / max_rate  # relative to the upsampled Nyquist
    n = np.arange(-half_len, half_len + 1)
    h = cutoff * np.sinc(cutoff * n) * np.kaiser(2 * half_len + 1, KAISER_BETA)
    return h / h.sum()


def resample_rational(x: np.ndarray, up: int, down: int) -> np.ndarray:
    """Resample by the exact rational factor up/down.

    Output length is ``ceil(len(x) * up / down)`` (within one sample of the
    ideal duration). float64 in, float64 out.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.gcd(up, down)
    up, down = up // g, down // g
    if up == down:
        return x.copy()
    return resample_poly(x, up, down, window=design_filter(up, down))


def resample(x: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    """Resample from src_rate to dst_rate (integer rates in Hz)."""
    if src_rate <= 0 or dst_rate <= 0:
        raise ValueError("sample rates must be positive")
    return resample_rational(x, dst_rate, src_rate)


def resample_by(x: np.ndarray, ratio: float, max_denominator: int = 1000) -> np.ndarray:
    """Resample by an arbitrary positive ratio (output ~= len(x) * ratio).

    The ratio is approximated by the closest rational with denominator up to
    ``max_denominator``; factors like 10/11 (speed 1.1) are recovered
    exactly.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    frac = Fraction(ratio).limit_denominator(max_denominator)
    return resample_rational(x, frac.numerator, frac.denominator)
