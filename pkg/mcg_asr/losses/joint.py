"""
Joint objective: gate loss + filtered-consistency + encoder-consistency + CTC.

Every L1 term is a mean over the valid (unpadded) elements, summed over gate
heads where there is one term per head. Clean-speech inputs to the two
consistency terms must come from a pass with gradients disabled; the guard
refuses tensors that still carry graph lineage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import GraphError, NumericError, ShapeError
from ..numerics import functional as F
from ..numerics.tensor import Tensor

COMPONENTS = ("l_g", "l_r", "l_o", "l_ctc")


def _mask_for(mask: Optional[np.ndarray], shape: Tuple[int, ...]) -> Optional[np.ndarray]:
    """Broadcast a (B, T) frame mask to (B, T, ...) feature shapes."""
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    while m.ndim < len(shape):
        m = m[..., None]
    return np.broadcast_to(m, shape)


def _require_detached(tensors: Sequence[Tensor], what: str) -> None:
    for i, t in enumerate(tensors):
        if t.requires_grad or not t.is_leaf:
            raise GraphError(f"{what}[{i}] still carries graph lineage; compute the clean branch under no_grad()")


def gate_loss(gates: Sequence[Tensor], labels: Sequence, mask: Optional[np.ndarray] = None) -> Tensor:
    """sum_i mean |G_i - label_i| over valid positions."""
    if len(gates) != len(labels):
        raise ShapeError("gate_loss", (len(gates),), (len(labels),), "one label per gate head")
    total = None
    for g, lab in zip(gates, labels):
        target = lab if isinstance(lab, Tensor) else Tensor(np.asarray(lab))
        term = F.l1_mean(g, target, _mask_for(mask, g.shape))
        total = term if total is None else total + term
    return total


def filtered_consistency_loss(r_noisy: Sequence[Tensor], r_clean_detached: Sequence[Tensor],
                              mask: Optional[np.ndarray] = None) -> Tensor:
    """sum_i mean |R_i - R_clean_i|; gradients reach only the noisy branch."""
    if len(r_noisy) != len(r_clean_detached):
        raise ShapeError("filtered_consistency_loss", (len(r_noisy),), (len(r_clean_detached),))
    _require_detached(r_clean_detached, "r_clean")
    total = None
    for r, rc in zip(r_noisy, r_clean_detached):
        term = F.l1_mean(r, rc, _mask_for(mask, r.shape))
        total = term if total is None else total + term
    return total


def encoder_consistency_loss(o_noisy: Tensor, o_clean_detached: Tensor,
                             mask: Optional[np.ndarray] = None) -> Tensor:
    """mean |O - O_clean| over valid subsampled frames."""
    _require_detached([o_clean_detached], "o_clean")
    return F.l1_mean(o_noisy, o_clean_detached, _mask_for(mask, o_noisy.shape))


@dataclass
class JointLossBreakdown:
    l_g: float
    l_r: float
    l_o: float
    l_ctc: float
    total: float
    weights: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    tensor: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {"l_g": self.l_g, "l_r": self.l_r, "l_o": self.l_o, "l_ctc": self.l_ctc,
                "total": self.total}

    def log_line(self, step: int, lr: float) -> str:
        return (f"step={step} l_g={self.l_g:.6f} l_r={self.l_r:.6f} l_o={self.l_o:.6f} "
                f"l_ctc={self.l_ctc:.6f} total={self.total:.6f} lr={lr:.3e}")


def total_loss(parts: Sequence, weights: Sequence[float] = (1.0, 1.0, 1.0, 1.0)) -> JointLossBreakdown:
    """
    Weighted sum of (l_g, l_r, l_o, l_ctc). Parts may be Tensors (the result
    keeps a differentiable total) or plain numbers. Missing parts may be None
    and count as zero.
    """
    if len(parts) != 4 or len(weights) != 4:
        raise ValueError("total_loss expects four parts and four weights")
    values = []
    for name, part in zip(COMPONENTS, parts):
        value = 0.0 if part is None else (part.item() if isinstance(part, Tensor) else float(part))
        if not math.isfinite(value):
            raise NumericError(f"loss component {name} is not finite ({value})", name=name)
        values.append(value)

    weighted: Optional[Tensor] = None
    for part, w in zip(parts, weights):
        if isinstance(part, Tensor):
            term = part * float(w)
            weighted = term if weighted is None else weighted + term
    total_value = float(sum(float(w) * v for w, v in zip(weights, values)))
    if weighted is None:
        weighted = Tensor(np.asarray(total_value))
    return JointLossBreakdown(*values, total=total_value,
                              weights=tuple(float(w) for w in weights), tensor=weighted)
