"""Parameterised layers composed from the differentiable primitives."""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ShapeError
from . import functional as F
from .tensor import Array, Tensor, get_dtype


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Base class: recursive parameter/buffer traversal and train/eval mode."""

    def __init__(self) -> None:
        self.training = True
        self._buffers: Dict[str, Array] = {}

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[Tuple[str, Union["Module", Parameter]]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Module, Parameter)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_parameters(prefix=f"{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, Array]]:
        for key, value in self._buffers.items():
            yield f"{prefix}{key}", value
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix=f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self, prefix: str = "") -> Dict[str, Array]:
        state = {name: p.data for name, p in self.named_parameters(prefix)}
        state.update({name: buf for name, buf in self.named_buffers(prefix)})
        return state

    def load_state_dict(self, state: Dict[str, Array], prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            if state[name].shape != p.shape:
                raise ShapeError("load_state_dict", p.shape, state[name].shape, name)
            p.data = np.ascontiguousarray(state[name], dtype=p.data.dtype)
        for name, buf in self.named_buffers(prefix):
            if name in state:
                buf[...] = state[name]


# ---------------------------------------------------------------------------
# Initialisers
# ---------------------------------------------------------------------------

def uniform(rng: np.random.Generator, shape: Sequence[int], bound: float) -> Array:
    return rng.uniform(-bound, bound, size=tuple(shape)).astype(get_dtype())


def kaiming_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int,
                    negative_slope: float = 0.25) -> Array:
    gain = math.sqrt(2.0 / (1.0 + negative_slope ** 2))
    return uniform(rng, shape, gain * math.sqrt(3.0 / fan_in))


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(uniform(rng, (in_features, out_features), bound))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: Tuple[int, int],
                 rng: np.random.Generator, stride: Tuple[int, int] = (1, 1),
                 padding: Tuple[int, int] = (0, 0)):
        super().__init__()
        kh, kw = kernel
        fan_in = in_channels * kh * kw
        self.weight = Parameter(kaiming_uniform(rng, (out_channels, in_channels, kh, kw), fan_in))
        self.bias = Parameter(np.zeros(out_channels))
        self.stride = tuple(stride)
        self.padding = tuple(padding)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: Tuple[int, int],
                 rng: np.random.Generator, stride: Tuple[int, int] = (1, 1),
                 padding: Tuple[int, int] = (0, 0), output_padding: Tuple[int, int] = (0, 0)):
        super().__init__()
        kh, kw = kernel
        fan_in = in_channels * kh * kw
        self.weight = Parameter(kaiming_uniform(rng, (in_channels, out_channels, kh, kw), fan_in))
        self.bias = Parameter(np.zeros(out_channels))
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        self.output_padding = tuple(output_padding)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding,
                                  self.output_padding)


class DepthwiseConv1d(Module):
    def __init__(self, channels: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(uniform(rng, (channels, kernel), 1.0 / math.sqrt(kernel)))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_conv1d(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalization over channel ``axis`` with running statistics."""

    def __init__(self, channels: int, axis: int = 1, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self._buffers["running_mean"] = np.zeros(channels, dtype=get_dtype())
        self._buffers["running_var"] = np.ones(channels, dtype=get_dtype())
        self.axis = axis
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self._buffers["running_mean"],
                            self._buffers["running_var"], self.training, self.momentum,
                            self.eps, self.axis)


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(features))
        self.beta = Parameter(np.zeros(features))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class PReLU(Module):
    def __init__(self, channels: int, axis: int = 1, init: float = 0.25):
        super().__init__()
        self.alpha = Parameter(np.full(channels, init))
        self.axis = axis

    def forward(self, x: Tensor) -> Tensor:
        return F.prelu(x, self.alpha, self.axis)


class Dropout(Module):
    def __init__(self, p: float = 0.0, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.p = p
        self._rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.p, self._rng, self.training)


class LSTM(Module):
    """Single-layer unidirectional LSTM over (batch, time, feature); gate order i, f, g, o."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(hidden_size)
        self.hidden_size = hidden_size
        self.w_ih = Parameter(uniform(rng, (input_size, 4 * hidden_size), bound))
        self.w_hh = Parameter(uniform(rng, (hidden_size, 4 * hidden_size), bound))
        self.bias = Parameter(uniform(rng, (4 * hidden_size,), bound))

    def cell(self, x_proj: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        H = self.hidden_size
        gates = x_proj + h @ self.w_hh
        act = F.sigmoid(gates)
        i, f, o = act[:, :H], act[:, H:2 * H], act[:, 3 * H:]
        g = F.tanh(gates[:, 2 * H:3 * H])
        c = f * c + i * g
        h = o * F.tanh(c)
        return h, c

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.w_ih.shape[0]:
            raise ShapeError("lstm", x.shape, self.w_ih.shape)
        B, T, _ = x.shape
        proj = F.linear(x, self.w_ih, self.bias)
        h = Tensor(np.zeros((B, self.hidden_size)))
        c = Tensor(np.zeros((B, self.hidden_size)))
        outputs = []
        for t in range(T):
            h, c = self.cell(proj[:, t, :], h, c)
            outputs.append(h)
        return F.stack(outputs, axis=1)
