"""
Deterministic batching of paired clean/noisy features.

Batch order depends only on (seed, epoch); each utterance's noise draw
depends only on (seed, epoch, utterance index), or on (seed, utterance
index) when noise is not re-drawn. Padded frames are zero and excluded by
the frame mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..dsp.features import FeatureExtractor, Waveform
from ..dsp.wavio import read_wav
from ..errors import DataError
from ..labeling import ThresholdSet, label_stack
from ..utils import derive_rng
from .manifest import NoiseRecord, UtteranceRecord
from .mixing import MixSpec, draw_mix_spec, mix
from .prefetch import Prefetcher

_NOISE_STREAM = 7


@dataclass
class Batch:
    ids: List[str]
    noisy: np.ndarray  # (B, T, Q)
    clean: np.ndarray  # (B, T, Q)
    labels: Optional[np.ndarray]  # (n, B, T, Q)
    mask: np.ndarray  # (B, T) bool
    lengths: np.ndarray  # (B,)
    tokens: List[List[int]]
    mixes: List[Optional[MixSpec]] = field(default_factory=list)
    looped: List[bool] = field(default_factory=list)  # noise cut wrapped around

    @property
    def size(self) -> int:
        return len(self.ids)


def pad_stack(feats: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero-pad (T_b, Q) matrices to a common T; returns (stacked, mask, lengths)."""
    lengths = np.array([f.shape[0] for f in feats], dtype=np.int64)
    T, Q = int(lengths.max()), feats[0].shape[1]
    out = np.zeros((len(feats), T, Q))
    for b, f in enumerate(feats):
        out[b, : f.shape[0]] = f
    mask = np.arange(T)[None, :] < lengths[:, None]
    return out, mask, lengths


class Batcher:
    """
    Epoch stream over a manifest. ``snr`` fixes the mixing SNR (test
    conditions); ``clean_only`` feeds the clean features on both paths.
    """

    def __init__(self, records: Sequence[UtteranceRecord], extractor: FeatureExtractor,
                 batch_size: int, seed: int, thresholds: Optional[ThresholdSet] = None,
                 noise: Sequence[NoiseRecord] = (), snr_range: Tuple[float, float] = (-5.0, 20.0),
                 snr: Optional[float] = None, clean_only: bool = False, redraw_noise: bool = True,
                 max_frames: int = 2000, min_frames: int = 1, shuffle: bool = True, prefetch: int = 0):
        if batch_size < 1:
            raise DataError("batch_size must be at least 1")
        self.extractor = extractor
        self.batch_size = batch_size
        self.seed = seed
        self.thresholds = thresholds
        self.snr_range = (float(snr), float(snr)) if snr is not None else tuple(snr_range)
        self.clean_only = clean_only
        self.redraw_noise = redraw_noise
        self.shuffle = shuffle
        self.prefetcher = Prefetcher(prefetch)

        self.noise_ids = [n.id for n in noise]
        self.noise_waves = [read_wav(n.path) for n in noise]
        if not clean_only and not self.noise_waves:
            raise DataError("noisy batching needs at least one noise clip")

        self.records: List[UtteranceRecord] = []
        self.waves: List[Waveform] = []
        self.skipped = 0
        for rec in records:
            wave = read_wav(rec.path)
            frames = extractor.frames_for(len(wave)) if len(wave) >= extractor.win_length else 0
            if frames > max_frames or frames < min_frames:
                self.skipped += 1
                continue
            self.records.append(rec)
            self.waves.append(wave)
        if self.skipped:
            logger.warning(f"[Batcher] skipped {self.skipped} utterance(s) outside {min_frames}..{max_frames} frames")
        if not self.records:
            raise DataError("no usable utterances in manifest")

    def __len__(self) -> int:
        return -(-len(self.records) // self.batch_size)

    def order(self, epoch: int) -> np.ndarray:
        if not self.shuffle:
            return np.arange(len(self.records))
        return derive_rng(self.seed, epoch).permutation(len(self.records))

    def _example(self, index: int, epoch: int):
        clean = self.waves[index]
        if self.clean_only:
            feats = self.extractor.extract(clean).values
            return feats, feats, False, None
        keys = (_NOISE_STREAM, epoch, index) if self.redraw_noise else (_NOISE_STREAM, index)
        rng = derive_rng(self.seed, *keys)
        spec = draw_mix_spec(rng, self.noise_ids, [len(w) for w in self.noise_waves], self.snr_range)
        result = mix(clean, self.noise_waves[self.noise_ids.index(spec.noise_id)], spec)
        if result.looped:
            logger.debug(f"[Batcher] noise {spec.noise_id} wrapped around for {self.records[index].id}")
        noisy = self.extractor.extract(result.noisy).values
        clean_feats = self.extractor.extract(result.clean).values
        return noisy, clean_feats, result.looped, spec

    def _batches(self, epoch: int) -> Iterator[Batch]:
        order = self.order(epoch)
        for start in range(0, len(order), self.batch_size):
            idx = [int(i) for i in order[start:start + self.batch_size]]
            noisy, clean, specs, looped = [], [], [], []
            for i in idx:
                x, x_clean, wrapped, spec = self._example(i, epoch)
                noisy.append(x)
                clean.append(x_clean)
                specs.append(spec)
                looped.append(wrapped)
            X, mask, lengths = pad_stack(noisy)
            X_clean, _, _ = pad_stack(clean)
            labels = None
            if self.thresholds is not None:
                labels = np.zeros((self.thresholds.n,) + X_clean.shape)
                for b, c in enumerate(clean):
                    labels[:, b, : c.shape[0]] = label_stack(c, self.thresholds)
            yield Batch(ids=[self.records[i].id for i in idx], noisy=X, clean=X_clean, labels=labels,
                        mask=mask, lengths=lengths, tokens=[list(self.records[i].tokens) for i in idx],
                        mixes=specs, looped=looped)

    def epoch(self, epoch: int) -> Iterator[Batch]:
        return self.prefetcher.iterate(lambda: self._batches(epoch))
