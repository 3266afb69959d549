"""16-bit PCM mono WAV reading and writing."""

import numpy as np
from scipy.io import wavfile

from ..errors import SignalError
from .features import Waveform

_SCALE = 32768.0


def read_wav(path: str) -> Waveform:
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise SignalError(f"cannot read {path}: {exc}") from exc
    if data.ndim != 1:
        raise SignalError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype != np.int16:
        raise SignalError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    return Waveform(data.astype(np.float64) / _SCALE, int(rate))


def write_wav(path: str, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * _SCALE), -32768, 32767).astype("<i2")
    wavfile.write(path, w.sample_rate, pcm)
