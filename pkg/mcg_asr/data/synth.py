"""
Synthetic toy corpus.

Every token id maps to a fixed harmonic template (three partials on a
token-specific fundamental) shaped by a raised-cosine envelope. An utterance
is a short lead-in, the token templates separated by gaps, and a tail, all
over a faint room tone. Noise clips are white noise and a babble-like sum of
band-limited, amplitude-modulated noise streams.
"""

from __future__ import annotations

import os
from typing import Dict, List, Sequence

import numpy as np
from loguru import logger
from scipy.signal import butter, get_window, sosfilt

from ..config import RunConfig
from ..dsp.features import Waveform
from ..dsp.wavio import write_wav
from ..utils import derive_rng, ensure_dir
from .manifest import NoiseRecord, UtteranceRecord, write_manifest, write_noise_list

TOKEN_MS = 160.0
GAP_MS = 40.0
EDGE_MS = 60.0
ROOM_TONE = 3e-4
PARTIALS = (1.0, 2.3, 3.7)
PARTIAL_GAINS = (1.0, 0.6, 0.35)
NOISE_SECONDS = 3.0

_SPLIT_KEYS = {"train": 1, "dev": 2, "test": 3, "noise_train": 4, "noise_test": 5}


def token_frequency(token: int, vocab_size: int) -> float:
    """Fundamentals are spread geometrically over two and a half octaves from 220 Hz."""
    return 220.0 * 2.0 ** ((token - 1) * 2.5 / max(vocab_size, 1))


def token_template(token: int, vocab_size: int, sample_rate: int = 16000,
                   duration_ms: float = TOKEN_MS) -> np.ndarray:
    if not 1 <= token <= vocab_size:
        raise ValueError(f"token {token} outside 1..{vocab_size}")
    n = int(round(duration_ms * sample_rate / 1000.0))
    t = np.arange(n) / sample_rate
    f0 = token_frequency(token, vocab_size)
    tone = sum(g * np.sin(2.0 * np.pi * f0 * p * t) for p, g in zip(PARTIALS, PARTIAL_GAINS))
    envelope = get_window(("tukey", 0.5), n, fftbins=False)
    return 0.25 * tone * envelope / sum(PARTIAL_GAINS)


def render_tokens(tokens: Sequence[int], vocab_size: int, rng: np.random.Generator,
                  sample_rate: int = 16000) -> Waveform:
    """Lead-in, templates separated by gaps, tail; small per-token level jitter."""
    gap = np.zeros(int(round(GAP_MS * sample_rate / 1000.0)))
    edge = np.zeros(int(round(EDGE_MS * sample_rate / 1000.0)))
    parts: List[np.ndarray] = [edge]
    for i, tok in enumerate(tokens):
        if i:
            parts.append(gap)
        parts.append(token_template(int(tok), vocab_size, sample_rate) * rng.uniform(0.8, 1.2))
    parts.append(edge)
    signal = np.concatenate(parts)
    signal = signal + ROOM_TONE * rng.standard_normal(signal.size)
    return Waveform(signal, sample_rate)


def white_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    return 0.1 * rng.standard_normal(n)


def babble_noise(rng: np.random.Generator, n: int, sample_rate: int = 16000, talkers: int = 4) -> np.ndarray:
    """Band-limited (300-3400 Hz) noise streams, each modulated at a syllable-like rate."""
    sos = butter(4, [300.0, 3400.0], btype="bandpass", fs=sample_rate, output="sos")
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    for _ in range(talkers):
        stream = sosfilt(sos, rng.standard_normal(n))
        rate = rng.uniform(3.0, 6.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += stream * (0.6 + 0.4 * np.sin(2.0 * np.pi * rate * t + phase))
    return 0.1 * out / max(float(np.max(np.abs(out))), 1e-12)


def _utterances(cfg: RunConfig, split: str, count: int, wav_dir: str) -> List[UtteranceRecord]:
    data, sr = cfg.data, cfg.features.sample_rate
    records = []
    for i in range(count):
        rng = derive_rng(cfg.train.seed, _SPLIT_KEYS[split], i)
        length = int(rng.integers(data.min_tokens, data.max_tokens + 1))
        tokens = [int(t) for t in rng.integers(1, data.vocab_size + 1, size=length)]
        wave = render_tokens(tokens, data.vocab_size, rng, sr)
        path = os.path.join(wav_dir, f"{split}_{i:04d}.wav")
        write_wav(path, wave)
        records.append(UtteranceRecord(f"{split}_{i:04d}", path, tokens))
    return records


def _noises(cfg: RunConfig, split: str, noise_dir: str) -> List[NoiseRecord]:
    sr = cfg.features.sample_rate
    n = int(NOISE_SECONDS * sr)
    kinds = (("white", lambda rng: white_noise(rng, n)), ("babble", lambda rng: babble_noise(rng, n, sr)))
    records = []
    for k, (kind, make) in enumerate(kinds):
        samples = make(derive_rng(cfg.train.seed, _SPLIT_KEYS[split], k))
        path = os.path.join(noise_dir, f"{kind}_{split}.wav")
        write_wav(path, Waveform(samples, sr))
        records.append(NoiseRecord(f"{kind}_{split}", path))
    return records


def synth_toy_corpus(cfg: RunConfig, out_dir: str) -> Dict[str, str]:
    """
    Write wav files and manifests under ``out_dir``. Returns the manifest
    paths keyed by ``train``, ``dev``, ``test``, ``noise_train``, ``noise_test``.
    Train and dev mix with the training noise clips; test uses its own clips.
    """
    wav_dir = ensure_dir(os.path.join(out_dir, "wav"))
    noise_dir = ensure_dir(os.path.join(out_dir, "noise"))
    data = cfg.data
    paths = {}
    for split, count in (("train", data.num_train), ("dev", data.num_dev), ("test", data.num_test)):
        records = _utterances(cfg, split, count, wav_dir)
        paths[split] = os.path.join(out_dir, f"{split}.lst")
        write_manifest(paths[split], records)
        logger.info(f"[Synth] {split}: {len(records)} utterances")
    for split in ("noise_train", "noise_test"):
        paths[split] = os.path.join(out_dir, f"{split}.lst")
        write_noise_list(paths[split], _noises(cfg, split, noise_dir))
    logger.info(f"[Synth] corpus written to {out_dir}")
    return paths


def manifest_paths(corpus_dir: str) -> Dict[str, str]:
    return {name: os.path.join(corpus_dir, f"{name}.lst") for name in _SPLIT_KEYS}
