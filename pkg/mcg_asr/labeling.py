"""
Clean-corpus statistics, per-bin thresholds and binary gate labels.

mu is the average over clips of each clip's time-mean log filterbank; sigma is
the population standard deviation (divide by D) of those clip means. A
threshold set holds kappa_i = mu + eps_i * sigma for ascending offsets, and a
gate label marks every point of a clean clip whose value reaches kappa.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from .dsp.features import LogFbank
from .errors import DataError, ShapeError

ArrayOrFbank = Union[np.ndarray, LogFbank]


def _values(x: ArrayOrFbank) -> np.ndarray:
    return np.asarray(x.values if isinstance(x, LogFbank) else x, dtype=np.float64)


@dataclass
class CorpusStats:
    mu: np.ndarray
    sigma: np.ndarray
    D: int

    @property
    def Q(self) -> int:
        return int(self.mu.shape[0])


@dataclass
class ThresholdSet:
    epsilons: List[float]
    kappas: np.ndarray  # (n, Q)

    @property
    def n(self) -> int:
        return len(self.epsilons)

    @property
    def Q(self) -> int:
        return int(self.kappas.shape[1])


@dataclass
class GateLabel:
    values: np.ndarray
    epsilon: float


def corpus_stats(clean_set: Sequence[ArrayOrFbank]) -> CorpusStats:
    """Two-phase reduction: per-clip time-means, then mean and population std across clips."""
    if len(clean_set) == 0:
        raise DataError("corpus_stats needs at least one clean clip")
    clip_means = []
    Q = None
    for i, clip in enumerate(clean_set):
        values = _values(clip)
        if values.ndim != 2 or values.shape[0] == 0:
            raise ShapeError("corpus_stats", values.shape, None, f"clip {i} must be a non-empty T x Q matrix")
        if Q is None:
            Q = values.shape[1]
        elif values.shape[1] != Q:
            raise ShapeError("corpus_stats", (Q,), (values.shape[1],), f"clip {i} has a different bin count")
        clip_means.append(values.mean(axis=0))
    means = np.stack(clip_means)
    mu = means.mean(axis=0)
    sigma = np.sqrt(((means - mu) ** 2).mean(axis=0))
    return CorpusStats(mu=mu, sigma=sigma, D=len(clip_means))


def make_thresholds(stats: CorpusStats, epsilons: Sequence[float]) -> ThresholdSet:
    eps = [float(e) for e in epsilons]
    if not eps:
        raise ValueError("at least one epsilon offset is required")
    if eps != sorted(eps):
        raise ValueError(f"epsilons must be sorted ascending, got {eps}")
    kappas = stats.mu[None, :] + np.asarray(eps)[:, None] * stats.sigma[None, :]
    return ThresholdSet(epsilons=eps, kappas=kappas)


def make_gate_labels(x_clean: ArrayOrFbank, thresholds: ThresholdSet) -> List[GateLabel]:
    """One binary label per offset: 1 where the clean value is >= kappa for its bin."""
    values = _values(x_clean)
    if values.ndim != 2 or values.shape[1] != thresholds.Q:
        raise ShapeError("make_gate_labels", values.shape, thresholds.kappas.shape)
    return [GateLabel(values=(values >= kappa[None, :]).astype(np.float64), epsilon=eps)
            for eps, kappa in zip(thresholds.epsilons, thresholds.kappas)]


def label_stack(x_clean: ArrayOrFbank, thresholds: ThresholdSet) -> np.ndarray:
    """Labels as an (n, T, Q) array."""
    return np.stack([g.values for g in make_gate_labels(x_clean, thresholds)])


_STATS_MAGIC = b"MCGSTATS"


def save_stats(path: str, stats: CorpusStats, epsilons: Sequence[float] = ()) -> None:
    """Header (magic, Q, D, n, epsilons) then mu and sigma as little-endian float64."""
    eps = [float(e) for e in epsilons]
    with open(path, "wb") as fh:
        fh.write(_STATS_MAGIC)
        fh.write(struct.pack("<III", stats.Q, stats.D, len(eps)))
        fh.write(struct.pack(f"<{len(eps)}d", *eps))
        fh.write(np.ascontiguousarray(stats.mu, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(stats.sigma, dtype="<f8").tobytes())


def load_stats(path: str):
    """Returns (CorpusStats, epsilons)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"stats file unavailable: {path}") from exc
    if blob[:8] != _STATS_MAGIC:
        raise DataError(f"{path}: not a corpus stats file")
    Q, D, n = struct.unpack_from("<III", blob, 8)
    pos = 20
    eps = list(struct.unpack_from(f"<{n}d", blob, pos))
    pos += 8 * n
    mu = np.frombuffer(blob, dtype="<f8", count=Q, offset=pos).copy()
    sigma = np.frombuffer(blob, dtype="<f8", count=Q, offset=pos + 8 * Q).copy()
    return CorpusStats(mu=mu, sigma=sigma, D=D), eps
