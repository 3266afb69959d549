"""Adam optimizer, plateau learning-rate schedule and gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import NumericError
from .nn import Parameter
from .tensor import Array


@dataclass
class AdamState:
    step: int = 0
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, Array] = field(default_factory=dict)
    v: Dict[str, Array] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class Adam:
    """Bias-corrected Adam over a name -> Parameter mapping."""

    def __init__(self, named_params: Sequence[Tuple[str, Parameter]], lr: float = 2e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params: Dict[str, Parameter] = dict(named_params)
        self.state = AdamState(learning_rate=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = value

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """
        One Adam update. Missing gradients count as zero. A non-finite gradient
        aborts the whole step before any parameter changes.
        """
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {name}", name=name)

        st = self.state
        st.step += 1
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = st.m[name], st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / c1
            v_hat = v / c2
            p.data = (p.data - st.learning_rate * m_hat / (np.sqrt(v_hat) + st.eps)).astype(p.data.dtype)

    def state_dict(self) -> Dict[str, Array]:
        out: Dict[str, Array] = {}
        for name in self.params:
            out[f"m/{name}"] = self.state.m[name]
            out[f"v/{name}"] = self.state.v[name]
        return out

    def load_state_dict(self, arrays: Dict[str, Array], step: int, lr: float) -> None:
        for name in self.params:
            self.state.m[name] = np.array(arrays[f"m/{name}"], dtype=self.state.m[name].dtype)
            self.state.v[name] = np.array(arrays[f"v/{name}"], dtype=self.state.v[name].dtype)
        self.state.step = step
        self.state.learning_rate = lr


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class PlateauSchedule:
    """
    Halve the learning rate after ``plateau_patience`` epochs without a new
    best validation loss; raise the stop flag after ``stop_patience``.
    """

    initial_lr: float = 2e-4
    decay_factor: float = 0.5
    plateau_patience: int = 5
    stop_patience: int = 20
    best_loss: float = math.inf
    epochs_since_improvement: int = 0
    epochs_since_decay: int = 0
    lr: Optional[float] = None

    def __post_init__(self) -> None:
        if self.lr is None:
            self.lr = self.initial_lr

    def update(self, val_loss: float) -> Tuple[float, bool]:
        if not math.isfinite(val_loss):
            raise NumericError(f"validation loss is not finite: {val_loss}", name="val_loss")
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.epochs_since_improvement = 0
            self.epochs_since_decay = 0
        else:
            self.epochs_since_improvement += 1
            self.epochs_since_decay += 1
            if self.epochs_since_decay >= self.plateau_patience:
                self.lr = self.lr * self.decay_factor
                self.epochs_since_decay = 0
        return self.lr, self.epochs_since_improvement >= self.stop_patience

    def state(self) -> Dict[str, float]:
        return {
            "best_loss": self.best_loss,
            "epochs_since_improvement": self.epochs_since_improvement,
            "epochs_since_decay": self.epochs_since_decay,
            "lr": self.lr,
        }

    def restore(self, state: Dict[str, float]) -> None:
        self.best_loss = float(state["best_loss"])
        self.epochs_since_improvement = int(state["epochs_since_improvement"])
        self.epochs_since_decay = int(state["epochs_since_decay"])
        self.lr = float(state["lr"])


def plateau_update(schedule: PlateauSchedule, val_loss: float) -> Dict[str, object]:
    new_lr, stop = schedule.update(val_loss)
    return {"new_lr": new_lr, "stop": stop}
