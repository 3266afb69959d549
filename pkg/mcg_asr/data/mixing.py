"""
Noisy mixtures at a requested SNR.

SNR is measured over the whole clip. The noise cut starts at ``offset`` and
wraps around when it runs past the end of the noise clip (flagged as looped).
If the mixture would clip, clean and scaled noise are both multiplied by the
same gain, so the SNR is unchanged and the gain is recorded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from ..dsp.features import Waveform
from ..errors import SignalError

PEAK_LIMIT = 0.99


@dataclass(frozen=True)
class MixSpec:
    snr_db: float
    noise_id: str = ""
    offset: int = 0
    seed: int = 0


@dataclass
class MixResult:
    noisy: Waveform
    clean: Waveform
    noise: Waveform
    gain: float
    looped: bool


def _power(x: np.ndarray) -> float:
    return float(np.mean(x * x))


def noise_cut(noise: np.ndarray, length: int, offset: int) -> Tuple[np.ndarray, bool]:
    if noise.size == 0:
        raise SignalError("noise clip is empty")
    offset = int(offset) % noise.size
    looped = offset + length > noise.size
    return np.take(noise, offset + np.arange(length), mode="wrap"), looped


def mix(clean: Waveform, noise: Waveform, spec: MixSpec) -> MixResult:
    """Full mixing bookkeeping: mixture, gain-adjusted clean and noise, gain and loop flag."""
    if clean.sample_rate != noise.sample_rate:
        raise SignalError(f"sample rates differ: {clean.sample_rate} vs {noise.sample_rate}")
    if not math.isfinite(spec.snr_db):
        raise SignalError(f"snr must be finite, got {spec.snr_db}")
    p_clean = _power(clean.samples)
    if p_clean == 0.0:
        raise SignalError("clean signal has zero power")
    cut, looped = noise_cut(noise.samples, len(clean), spec.offset)
    p_noise = _power(cut)
    if p_noise == 0.0:
        raise SignalError(f"noise {spec.noise_id or '<anonymous>'} has zero power over the cut")

    scale = math.sqrt(p_clean / (p_noise * 10.0 ** (spec.snr_db / 10.0)))
    scaled_noise = cut * scale
    noisy = clean.samples + scaled_noise
    peak = float(np.max(np.abs(noisy)))
    gain = PEAK_LIMIT / peak if peak > PEAK_LIMIT else 1.0
    sr = clean.sample_rate
    return MixResult(
        noisy=Waveform(noisy * gain, sr),
        clean=Waveform(clean.samples * gain, sr),
        noise=Waveform(scaled_noise * gain, sr),
        gain=gain,
        looped=looped,
    )


def mix_at_snr(clean: Waveform, noise: Waveform, spec: MixSpec) -> Waveform:
    return mix(clean, noise, spec).noisy


def measured_snr(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * math.log10(_power(np.asarray(clean)) / _power(np.asarray(noise)))


def draw_mix_spec(rng: np.random.Generator, noise_ids: Sequence[str], noise_lengths: Sequence[int],
                  snr_range: Tuple[float, float]) -> MixSpec:
    """Uniform SNR in the range, uniform noise clip, uniform crop offset."""
    if not noise_ids:
        raise SignalError("no noise clips to draw from")
    lo, hi = snr_range
    snr = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    k = int(rng.integers(len(noise_ids)))
    offset = int(rng.integers(max(int(noise_lengths[k]), 1)))
    seed = int(rng.integers(2 ** 31))
    return MixSpec(snr_db=snr, noise_id=noise_ids[k], offset=offset, seed=seed)
