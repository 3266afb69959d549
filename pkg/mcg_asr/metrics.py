"""Greedy CTC decoding, edit-alignment error counts and SI-SDR."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dsp.features import Waveform
from .errors import SignalError
from .numerics.tensor import Tensor

BLANK = 0
SI_SDR_CAP_DB = 120.0
SI_SDR_EPS = 1e-12


@dataclass
class AlignmentCounts:
    S: int = 0
    D: int = 0
    I: int = 0  # noqa: E741
    N: int = 0

    @property
    def errors(self) -> int:
        return self.S + self.D + self.I

    @property
    def wer(self) -> float:
        if self.N == 0:
            return 0.0 if self.I == 0 else math.inf
        return self.errors / self.N

    @property
    def infinite(self) -> bool:
        return self.N == 0 and self.I > 0

    def __add__(self, other: "AlignmentCounts") -> "AlignmentCounts":
        return AlignmentCounts(self.S + other.S, self.D + other.D, self.I + other.I, self.N + other.N)


def _as_array(logits) -> np.ndarray:
    return logits.data if isinstance(logits, Tensor) else np.asarray(logits)


def greedy_ctc_decode(logits, length: Optional[int] = None) -> List[int]:
    """Argmax per frame, collapse repeats, drop blanks."""
    data = _as_array(logits)
    if length is not None:
        data = data[:length]
    best = np.argmax(data, axis=-1)
    out: List[int] = []
    prev = None
    for k in best:
        k = int(k)
        if k != prev and k != BLANK:
            out.append(k)
        prev = k
    return out


def batch_greedy_decode(logits, lengths: Sequence[int]) -> List[List[int]]:
    data = _as_array(logits)
    return [greedy_ctc_decode(data[b], int(lengths[b])) for b in range(data.shape[0])]


def wer_align(ref: Sequence, hyp: Sequence) -> AlignmentCounts:
    """
    Unit-cost Levenshtein alignment. The backtrace prefers substitution
    (or match), then deletion, then insertion when costs tie.
    """
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(sub, cost[i - 1, j] + 1, cost[i, j - 1] + 1)

    counts = AlignmentCounts(N=n)
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            counts.S += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            counts.D += 1
            i -= 1
        else:
            counts.I += 1
            j -= 1
    return counts


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    return wer_align(ref, hyp).errors


@dataclass
class WerSummary:
    """Corpus-level percentages plus per-utterance averages of the raw counts."""

    totals: AlignmentCounts
    per_utt_S: float
    per_utt_D: float
    per_utt_I: float
    per_utt_wer: float
    utterances: int

    @property
    def wer_percent(self) -> float:
        return 100.0 * self.totals.wer

    def as_dict(self) -> Dict[str, float]:
        t = self.totals
        denom = max(t.N, 1)
        return {
            "S": 100.0 * t.S / denom, "D": 100.0 * t.D / denom, "I": 100.0 * t.I / denom,
            "WER": self.wer_percent, "S_per_utt": self.per_utt_S, "D_per_utt": self.per_utt_D,
            "I_per_utt": self.per_utt_I, "WER_per_utt": self.per_utt_wer, "utterances": self.utterances,
        }


def summarize(alignments: Sequence[AlignmentCounts]) -> WerSummary:
    totals = AlignmentCounts()
    for a in alignments:
        totals = totals + a
    k = max(len(alignments), 1)
    finite = [a.wer for a in alignments if not a.infinite]
    return WerSummary(
        totals=totals,
        per_utt_S=sum(a.S for a in alignments) / k,
        per_utt_D=sum(a.D for a in alignments) / k,
        per_utt_I=sum(a.I for a in alignments) / k,
        per_utt_wer=100.0 * (sum(finite) / len(finite)) if finite else 0.0,
        utterances=len(alignments),
    )


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB, clamped to [-120, +120].

    An estimate with no energy after mean removal (silence or pure DC) scores
    the floor.
    """
    ref = np.asarray(reference.samples if isinstance(reference, Waveform) else reference, dtype=np.float64)
    est = np.asarray(estimate.samples if isinstance(estimate, Waveform) else estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise SignalError(f"si_sdr needs equal lengths, got {ref.shape} and {est.shape}")
    ref = ref - ref.mean()
    est = est - est.mean()
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise SignalError("si_sdr reference has zero energy")
    if float(np.dot(est, est)) <= SI_SDR_EPS * ref_energy:
        return -SI_SDR_CAP_DB
    target = (np.dot(est, ref) / ref_energy) * ref
    residual = est - target
    target_energy = float(np.dot(target, target))
    residual_energy = float(np.dot(residual, residual))
    if residual_energy <= target_energy * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    if target_energy <= residual_energy * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return -SI_SDR_CAP_DB
    value = 10.0 * math.log10(target_energy / residual_energy)
    return float(np.clip(value, -SI_SDR_CAP_DB, SI_SDR_CAP_DB))
