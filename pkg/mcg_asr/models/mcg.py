"""
Multiple-confidence-gate front-end.

A CRN trunk (strided conv encoder, LSTM bottleneck, transposed-conv decoder
with skip concatenation) emits ``head_channels * n`` maps. Head i reads its
own group of channels at every (t, q) through a small fully connected layer
and a sigmoid, giving gate G_i in (0, 1). The noisy features are multiplied
by each gate and the n products are fused by one conv block into x_in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..config import McgConfig
from ..errors import ConfigError, ShapeError
from ..numerics import functional as F
from ..numerics.nn import (BatchNorm, Conv2d, ConvTranspose2d, LSTM, Linear, Module, Parameter, PReLU,
                           uniform)
from ..numerics.tensor import Tensor


@dataclass(frozen=True)
class ConvBlockSpec:
    in_channels: int
    out_channels: int
    stride: tuple  # (time, freq)
    transposed: bool = False
    kernel: tuple = (3, 3)
    padding: tuple = (1, 1)

    def output_bins(self, bins: int) -> int:
        s = self.stride[1]
        if self.transposed:
            return bins * s
        return (bins + 2 * self.padding[1] - self.kernel[1]) // s + 1


class ConvBlock(Module):
    """2-D convolution (or its transpose) + batch-norm + PReLU."""

    def __init__(self, spec: ConvBlockSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        if spec.transposed:
            output_padding = (spec.stride[0] - 1, spec.stride[1] - 1)
            self.conv = ConvTranspose2d(spec.in_channels, spec.out_channels, spec.kernel, rng,
                                        spec.stride, spec.padding, output_padding)
        else:
            self.conv = Conv2d(spec.in_channels, spec.out_channels, spec.kernel, rng, spec.stride,
                               spec.padding)
        self.bn = BatchNorm(spec.out_channels, axis=1)
        self.act = PReLU(spec.out_channels, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.act(self.bn(self.conv(x)))


@dataclass
class McgOutput:
    gates: List[Tensor]
    filtered: List[Tensor]
    x_in: Tensor


def apply_gates(gates: Sequence[Tensor], x: Tensor) -> List[Tensor]:
    """R_i = G_i * X elementwise, differentiable through both factors."""
    out = []
    for i, g in enumerate(gates):
        if g.shape != x.shape:
            raise ShapeError("apply_gates", g.shape, x.shape, f"gate {i}")
        out.append(g * x)
    return out


class McgFrontEnd(Module):
    def __init__(self, cfg: McgConfig, rng: np.random.Generator):
        super().__init__()
        if cfg.n_bins % cfg.freq_stride:
            raise ConfigError(f"Q={cfg.n_bins} is not divisible by the total frequency stride {cfg.freq_stride}")
        self.cfg = cfg
        ch = list(cfg.channels)
        L = len(ch)
        strides = [(t, f) for f, t in cfg.strides]

        self.encoders = []
        bins = cfg.n_bins
        in_ch = 1
        for c, s in zip(ch, strides):
            spec = ConvBlockSpec(in_ch, c, s)
            self.encoders.append(ConvBlock(spec, rng))
            bins = spec.output_bins(bins)
            in_ch = c
        self.bottleneck_bins = bins
        if ch[-1] * bins != cfg.fc_units:
            raise ConfigError(f"fc_units={cfg.fc_units} but the encoder flattens to {ch[-1]} x {bins}")

        self.lstm = LSTM(cfg.fc_units, cfg.lstm_units, rng)
        self.fc = Linear(cfg.lstm_units, cfg.fc_units, rng)

        self.decoders = []
        prev = ch[-1]
        for i in range(L):
            skip = ch[L - 1 - i]
            out_ch = ch[L - 2 - i] if i < L - 1 else cfg.head_channels * cfg.n
            spec = ConvBlockSpec(prev + skip, out_ch, strides[L - 1 - i], transposed=True)
            self.decoders.append(ConvBlock(spec, rng))
            prev = out_ch

        bound = 1.0 / math.sqrt(cfg.head_channels)
        self.head_weights = [Parameter(uniform(rng, (cfg.head_channels, 1), bound)) for _ in range(cfg.n)]
        self.head_biases = [Parameter(np.zeros(1)) for _ in range(cfg.n)]
        self.fusion = ConvBlock(ConvBlockSpec(cfg.n, 1, (1, 1)), rng)

    @property
    def n(self) -> int:
        return self.cfg.n

    def trunk(self, x: Tensor) -> Tensor:
        """(B, 1, T, Q) -> (B, head_channels * n, T, Q)."""
        skips = []
        h = x
        for enc in self.encoders:
            h = enc(h)
            skips.append(h)
        B, C, T, Fq = h.shape
        seq = h.transpose(0, 2, 1, 3).reshape(B, T, C * Fq)
        seq = self.fc(self.lstm(seq))
        h = seq.reshape(B, T, C, Fq).transpose(0, 2, 1, 3)
        for i, dec in enumerate(self.decoders):
            h = dec(F.concat([h, skips[len(skips) - 1 - i]], axis=1))
        return h

    def heads(self, features: Tensor) -> List[Tensor]:
        """Per-head FC over its channel group, then sigmoid: list of (B, T, Q) gates."""
        C = self.cfg.head_channels
        maps = features.transpose(0, 2, 3, 1)  # (B, T, Q, C*n)
        gates = []
        for i in range(self.n):
            group = maps[:, :, :, i * C:(i + 1) * C]
            logit = (group @ self.head_weights[i]).reshape(group.shape[:3]) + self.head_biases[i]
            gates.append(F.sigmoid(logit))
        return gates

    def fuse(self, gates: Sequence[Tensor], x: Tensor) -> McgOutput:
        """Gate the features and fuse the n products; accepts injected gates."""
        filtered = apply_gates(gates, x)
        stacked = F.stack(filtered, axis=1)  # (B, n, T, Q)
        fused = self.fusion(stacked)
        B, _, T, Q = fused.shape
        return McgOutput(gates=list(gates), filtered=filtered, x_in=fused.reshape(B, T, Q))

    def forward(self, x: Tensor) -> McgOutput:
        if x.ndim == 4:
            if x.shape[1] != 1:
                raise ShapeError("mcg_forward", x.shape, None, "expected a single input channel")
            x = x.reshape(x.shape[0], x.shape[2], x.shape[3])
        if x.ndim != 3 or x.shape[2] != self.cfg.n_bins:
            raise ShapeError("mcg_forward", x.shape, (self.cfg.n_bins,), "expected (batch, T, Q)")
        B, T, Q = x.shape
        gates = self.heads(self.trunk(x.reshape(B, 1, T, Q)))
        return self.fuse(gates, x)


def mcg_forward(x: Tensor, model: McgFrontEnd) -> McgOutput:
    return model(x)
