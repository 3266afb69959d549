"""
Waveform -> log filterbank features.

Framing has no centering or padding: a clip of N samples yields
``1 + (N - win) // hop`` frames. Each frame is Hann-windowed and transformed
with an ``n_fft``-point real FFT.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import get_window

from ..errors import SignalError


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise SignalError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class FrameParams:
    win_ms: float = 32.0
    hop_ms: float = 8.0
    n_fft: int = 512

    def win_length(self, sample_rate: int) -> int:
        return int(round(self.win_ms * sample_rate / 1000.0))

    def hop_length(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


@dataclass
class LogFbank:
    values: np.ndarray
    frame_params: FrameParams = field(default_factory=FrameParams)

    @property
    def T(self) -> int:
        return int(self.values.shape[0])

    @property
    def Q(self) -> int:
        return int(self.values.shape[1])


def num_frames(n_samples: int, win: int, hop: int) -> int:
    return 1 + (n_samples - win) // hop


def stft(w: Waveform, win_ms: float = 32.0, hop_ms: float = 8.0, n_fft: int = 512) -> np.ndarray:
    """Complex spectrogram of shape (T, n_fft // 2 + 1)."""
    params = FrameParams(win_ms, hop_ms, n_fft)
    win = params.win_length(w.sample_rate)
    hop = params.hop_length(w.sample_rate)
    if win > n_fft:
        raise SignalError(f"window of {win} samples does not fit in n_fft={n_fft}")
    if hop <= 0:
        raise SignalError("hop must be at least one sample")
    if len(w) < win:
        raise SignalError(f"signal of {len(w)} samples is shorter than one window ({win})")
    T = num_frames(len(w), win, hop)
    window = get_window("hann", win, fftbins=True)
    idx = np.arange(win)[None, :] + hop * np.arange(T)[:, None]
    frames = w.samples[idx] * window
    return np.fft.rfft(frames, n=n_fft, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def hz_to_bark(f):
    f = np.asarray(f, dtype=np.float64)
    return 26.81 * f / (1960.0 + f) - 0.53


def bark_to_hz(z):
    z = np.asarray(z, dtype=np.float64)
    return 1960.0 * (z + 0.53) / (26.28 - z)


def filterbank(n_bins: int, n_fft: int, sample_rate: int, f_min: float = 0.0,
               f_max: Optional[float] = None, scale: str = "mel") -> np.ndarray:
    """Triangular filters, shape (n_bins, n_fft // 2 + 1), equally spaced on the chosen scale."""
    n_freqs = n_fft // 2 + 1
    if n_bins < 1:
        raise SignalError("filterbank needs at least one bin")
    if n_bins > n_freqs:
        raise SignalError(f"{n_bins} filters exceed the {n_freqs} FFT bins")
    f_max = sample_rate / 2.0 if f_max is None else f_max
    if not 0.0 <= f_min < f_max <= sample_rate / 2.0:
        raise SignalError(f"invalid filterbank range [{f_min}, {f_max}]")
    if scale == "mel":
        to_scale, from_scale = hz_to_mel, mel_to_hz
    elif scale == "bark":
        to_scale, from_scale = hz_to_bark, bark_to_hz
    else:
        raise SignalError(f"unknown filterbank scale {scale!r}")

    edges = from_scale(np.linspace(to_scale(f_min), to_scale(f_max), n_bins + 2))
    freqs = np.linspace(0.0, sample_rate / 2.0, n_freqs)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def filter_centers(n_bins: int, sample_rate: int, f_min: float = 0.0, f_max: Optional[float] = None,
                   scale: str = "mel") -> np.ndarray:
    f_max = sample_rate / 2.0 if f_max is None else f_max
    to_scale, from_scale = (hz_to_mel, mel_to_hz) if scale == "mel" else (hz_to_bark, bark_to_hz)
    return from_scale(np.linspace(to_scale(f_min), to_scale(f_max), n_bins + 2))[1:-1]


def log_fbank(spec: np.ndarray, Q: int = 80, f_min: float = 0.0, f_max: Optional[float] = None,
              floor_eps: float = 1e-10, sample_rate: int = 16000, scale: str = "mel",
              frame_params: Optional[FrameParams] = None) -> LogFbank:
    """log(max(filterbank . |spec|^2, floor_eps)) with shape (T, Q)."""
    n_fft = (spec.shape[1] - 1) * 2
    fb = filterbank(Q, n_fft, sample_rate, f_min, f_max, scale)
    power = np.abs(spec) ** 2
    energies = power @ fb.T
    values = np.log(np.maximum(energies, floor_eps))
    return LogFbank(values=values, frame_params=frame_params or FrameParams(n_fft=n_fft))


class FeatureExtractor:
    """Framing + filterbank bundle used by the corpus and batching code."""

    def __init__(self, sample_rate: int = 16000, win_ms: float = 32.0, hop_ms: float = 8.0,
                 n_fft: int = 512, n_bins: int = 80, f_min: float = 0.0,
                 f_max: Optional[float] = None, floor_eps: float = 1e-10, scale: str = "mel"):
        self.sample_rate = sample_rate
        self.params = FrameParams(win_ms, hop_ms, n_fft)
        self.n_bins = n_bins
        self.f_min = f_min
        self.f_max = f_max
        self.floor_eps = floor_eps
        self.scale = scale
        self._fb = filterbank(n_bins, n_fft, sample_rate, f_min, f_max, scale)

    @classmethod
    def from_config(cls, cfg) -> "FeatureExtractor":
        return cls(cfg.sample_rate, cfg.win_ms, cfg.hop_ms, cfg.n_fft, cfg.n_bins, cfg.f_min,
                   cfg.f_max, cfg.floor_eps, cfg.scale)

    @property
    def win_length(self) -> int:
        return self.params.win_length(self.sample_rate)

    @property
    def hop_length(self) -> int:
        return self.params.hop_length(self.sample_rate)

    def frames_for(self, n_samples: int) -> int:
        return num_frames(n_samples, self.win_length, self.hop_length)

    def extract(self, w: Waveform) -> LogFbank:
        if w.sample_rate != self.sample_rate:
            raise SignalError(f"expected {self.sample_rate} Hz audio, got {w.sample_rate} Hz")
        spec = stft(w, self.params.win_ms, self.params.hop_ms, self.params.n_fft)
        energies = (np.abs(spec) ** 2) @ self._fb.T
        return LogFbank(np.log(np.maximum(energies, self.floor_eps)), self.params)


_DUMP_MAGIC = b"LFBK"


def save_features(path: str, feats: LogFbank) -> None:
    """Header (magic, T, Q, win_ms, hop_ms, n_fft) then row-major float32 values."""
    p = feats.frame_params
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(struct.pack("<IIddI", feats.T, feats.Q, p.win_ms, p.hop_ms, p.n_fft))
        fh.write(np.ascontiguousarray(feats.values, dtype="<f4").tobytes())


def load_features(path: str) -> LogFbank:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _DUMP_MAGIC:
        raise SignalError(f"{path}: not a feature dump")
    header = struct.calcsize("<IIddI")
    T, Q, win_ms, hop_ms, n_fft = struct.unpack_from("<IIddI", blob, 4)
    values = np.frombuffer(blob[4 + header:], dtype="<f4").reshape(T, Q)
    return LogFbank(values.astype(np.float64), FrameParams(win_ms, hop_ms, n_fft))
