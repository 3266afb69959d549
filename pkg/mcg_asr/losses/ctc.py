"""
Connectionist temporal classification loss.

Forward and backward variables are computed in log space over the
blank-augmented label sequence; the gradient with respect to the logits is
the closed form ``softmax - occupancy``, where occupancy sums the per-state
posteriors of every lattice state carrying that symbol.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from ..errors import CtcError, NumericError, ShapeError
from ..numerics.tensor import Tensor

BLANK = 0
NEG_INF = -np.inf


@dataclass
class CtcTarget:
    tokens: List[int]

    @property
    def U(self) -> int:
        return len(self.tokens)

    @property
    def repeats(self) -> int:
        return sum(1 for a, b in zip(self.tokens, self.tokens[1:]) if a == b)

    @property
    def min_frames(self) -> int:
        return self.U + self.repeats


def extend_with_blanks(tokens: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Blank-augmented labels and, per state, whether the skip from s-2 is allowed."""
    ext = [BLANK]
    for tok in tokens:
        ext += [int(tok), BLANK]
    ext = np.asarray(ext, dtype=np.int64)
    skip = np.zeros(ext.size, dtype=bool)
    for s in range(2, ext.size):
        skip[s] = ext[s] != BLANK and ext[s] != ext[s - 2]
    return ext, skip


def _lse(*terms: np.ndarray) -> np.ndarray:
    out = terms[0]
    for t in terms[1:]:
        out = np.logaddexp(out, t)
    return out


def _shift(v: np.ndarray, k: int) -> np.ndarray:
    """Move entries k states to the right (k > 0) or left (k < 0), filling with -inf."""
    out = np.full(v.size, NEG_INF)
    if k > 0 and k < v.size:
        out[k:] = v[:-k]
    elif k < 0 and -k < v.size:
        out[:k] = v[-k:]
    return out


def forward_variables(log_probs: np.ndarray, ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    T, S = log_probs.shape[0], ext.size
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = log_probs[0, ext[0]]
    if S > 1:
        alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = _shift(prev, 1)
        jump = np.where(skip, _shift(prev, 2), NEG_INF)
        alpha[t] = _lse(stay, step, jump) + log_probs[t, ext]
    return alpha


def backward_variables(log_probs: np.ndarray, ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    T, S = log_probs.shape[0], ext.size
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = log_probs[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = log_probs[T - 1, ext[S - 2]]
    # state s may jump to s+2 when s+2 allows a skip
    skip_from = np.zeros(S, dtype=bool)
    skip_from[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step = _shift(nxt, -1)
        jump = np.where(skip_from, _shift(nxt, -2), NEG_INF)
        beta[t] = _lse(stay, step, jump) + log_probs[t, ext]
    return beta


def ctc_nll(logits: np.ndarray, tokens: Sequence[int]) -> Tuple[float, np.ndarray]:
    """-log p(tokens | logits) for one (T, V+1) logit matrix, and its gradient."""
    T, K = logits.shape
    target = CtcTarget(list(tokens))
    if any(t <= 0 or t >= K for t in target.tokens):
        raise CtcError(f"target ids must lie in 1..{K - 1}, got {target.tokens}")
    if target.min_frames > T:
        raise CtcError(f"target of length {target.U} with {target.repeats} repeats needs "
                       f"{target.min_frames} frames, only {T} available")
    if not np.all(np.isfinite(logits)):
        raise NumericError("CTC logits contain non-finite values", name="l_ctc")
    log_probs = log_softmax(logits.astype(np.float64), axis=-1)
    ext, skip = extend_with_blanks(target.tokens)
    alpha = forward_variables(log_probs, ext, skip)
    beta = backward_variables(log_probs, ext, skip)
    S = ext.size
    log_p = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    if not np.isfinite(log_p):
        raise CtcError("target has zero probability under the lattice")

    gamma = np.exp(alpha + beta - log_probs[:, ext] - log_p)
    occupancy = np.zeros((T, K))
    for s in range(S):
        occupancy[:, ext[s]] += gamma[:, s]
    grad = np.exp(log_probs) - occupancy
    return float(-log_p), grad


def ctc_loss(logits: Tensor, targets: Sequence[Sequence[int]],
             input_lengths: Optional[Sequence[int]] = None, reduction: str = "mean") -> Tensor:
    """
    Batched CTC loss. ``logits`` is (B, T', V+1) or a single (T', V+1) matrix
    with one target. Frames past ``input_lengths[b]`` are ignored. The result
    is the mean (or sum) of per-utterance negative log-likelihoods.
    """
    data = logits.data
    single = data.ndim == 2
    if single:
        data = data[None]
        if len(targets) == 0 or not isinstance(targets[0], (list, tuple, np.ndarray)):
            targets = [list(targets)]
    if data.ndim != 3:
        raise ShapeError("ctc_loss", logits.shape, None, "expected (batch, T, V+1)")
    B, T, K = data.shape
    if len(targets) != B:
        raise ShapeError("ctc_loss", (B,), (len(targets),), "one target per batch item")
    lengths = np.full(B, T) if input_lengths is None else np.asarray(input_lengths)

    total = 0.0
    grad = np.zeros((B, T, K))
    for b in range(B):
        n = int(lengths[b])
        nll, g = ctc_nll(data[b, :n], targets[b])
        total += nll
        grad[b, :n] = g
    scale = 1.0 / B if reduction == "mean" else 1.0
    value = np.asarray(total * scale)
    grad *= scale
    if single:
        grad = grad[0]

    return Tensor._from_op(value, (logits,), lambda g: (g * grad,), "ctc_loss")
