"""
Conformer encoder with convolutional subsampling and a linear CTC head.

Input (batch, T, Q) features are batch-normalised per bin, subsampled 4x in
time by two stride-2 convolutions, projected to d_model, given sinusoidal
absolute positions and passed through the Conformer blocks:

    X'   = X + 1/2 FFN(X)
    X''  = X' + MHSA(X')
    X''' = X'' + Conv(X'')
    O    = LayerNorm(X''' + 1/2 FFN(X'''))
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..config import ConformerConfig
from ..errors import ShapeError
from ..numerics import functional as F
from ..numerics.nn import BatchNorm, Conv2d, DepthwiseConv1d, Dropout, LayerNorm, Linear, Module
from ..numerics.tensor import Tensor

MIN_FRAMES = 8


def subsampled_length(length: int) -> int:
    """Frames left after two (k=3, s=2, p=1) convolutions: ceil(ceil(T/2)/2)."""
    return -(-(-(-int(length) // 2)) // 2)


def subsampled_lengths(lengths) -> np.ndarray:
    return np.array([subsampled_length(n) for n in lengths], dtype=np.int64)


def sinusoidal_positions(T: int, d_model: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    div = np.exp(np.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
    table = np.zeros((T, d_model))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div[: d_model // 2])
    return table


@dataclass
class EncoderOutput:
    O: Tensor
    logits: Tensor
    lengths: np.ndarray


class ConvSubsampling(Module):
    def __init__(self, n_bins: int, d_model: int, rng: np.random.Generator, dropout: float = 0.0,
                 dropout_rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv1 = Conv2d(1, d_model, (3, 3), rng, stride=(2, 2), padding=(1, 1))
        self.conv2 = Conv2d(d_model, d_model, (3, 3), rng, stride=(2, 2), padding=(1, 1))
        self.out_bins = subsampled_length(n_bins)
        self.proj = Linear(d_model * self.out_bins, d_model, rng)
        self.dropout = Dropout(dropout, dropout_rng)

    def forward(self, x: Tensor) -> Tensor:
        B, T, Q = x.shape
        if T < MIN_FRAMES:
            raise ShapeError("subsample", x.shape, None, f"needs at least {MIN_FRAMES} frames")
        h = F.relu(self.conv1(x.reshape(B, 1, T, Q)))
        h = F.relu(self.conv2(h))
        _, C, Tp, Qp = h.shape
        h = h.transpose(0, 2, 1, 3).reshape(B, Tp, C * Qp)
        return self.dropout(self.proj(h))


class FeedForward(Module):
    """LayerNorm -> Linear -> swish -> dropout -> Linear -> dropout."""

    def __init__(self, d_model: int, units: int, rng: np.random.Generator, dropout: float = 0.0,
                 dropout_rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.norm = LayerNorm(d_model)
        self.w1 = Linear(d_model, units, rng)
        self.w2 = Linear(units, d_model, rng)
        self.drop1 = Dropout(dropout, dropout_rng)
        self.drop2 = Dropout(dropout, dropout_rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.drop2(self.w2(self.drop1(F.swish(self.w1(self.norm(x))))))


class MultiHeadSelfAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, dropout: float = 0.0,
                 dropout_rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.heads = heads
        self.d_k = d_model // heads
        self.norm = LayerNorm(d_model)
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self.dropout = Dropout(dropout, dropout_rng)

    def attend(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        """Scaled dot-product attention before the output projection."""
        B, T, D = x.shape
        h, dk = self.heads, self.d_k

        def split(t: Tensor) -> Tensor:
            return t.reshape(B, T, h, dk).transpose(0, 2, 1, 3)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
        if mask is not None:
            bias = np.where(np.asarray(mask, dtype=bool), 0.0, -1e9)[:, None, None, :]
            scores = scores + bias
        weights = F.softmax(scores, axis=-1)
        ctx = weights @ v
        return ctx.transpose(0, 2, 1, 3).reshape(B, T, D)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        return self.dropout(self.out(self.attend(self.norm(x), mask)))


class ConvolutionModule(Module):
    """LayerNorm -> pointwise -> GLU -> depthwise -> BN -> swish -> pointwise -> dropout."""

    def __init__(self, d_model: int, kernel: int, rng: np.random.Generator, dropout: float = 0.0,
                 dropout_rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.norm = LayerNorm(d_model)
        self.pointwise1 = Linear(d_model, 2 * d_model, rng)
        self.depthwise = DepthwiseConv1d(d_model, kernel, rng)
        self.bn = BatchNorm(d_model, axis=2)
        self.pointwise2 = Linear(d_model, d_model, rng)
        self.dropout = Dropout(dropout, dropout_rng)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        h = F.glu(self.pointwise1(self.norm(x)), axis=-1)
        if mask is not None:
            h = F.where(np.asarray(mask, dtype=bool)[:, :, None], h)
        h = F.swish(self.bn(self.depthwise(h)))
        return self.dropout(self.pointwise2(h))


class ConformerBlock(Module):
    def __init__(self, cfg: ConformerConfig, rng: np.random.Generator,
                 dropout_rng: Optional[np.random.Generator] = None):
        super().__init__()
        d = cfg.d_model
        self.ffn1 = FeedForward(d, cfg.ffn_units, rng, cfg.dropout, dropout_rng)
        self.mhsa = MultiHeadSelfAttention(d, cfg.heads, rng, cfg.dropout, dropout_rng)
        self.conv = ConvolutionModule(d, cfg.conv_kernel, rng, cfg.dropout, dropout_rng)
        self.ffn2 = FeedForward(d, cfg.ffn_units, rng, cfg.dropout, dropout_rng)
        self.norm = LayerNorm(d)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        if x.ndim != 3:
            raise ShapeError("conformer_block", x.shape, None, "expected (batch, T, d_model)")
        x = x + self.ffn1(x) * 0.5
        x = x + self.mhsa(x, mask)
        x = x + self.conv(x, mask)
        return self.norm(x + self.ffn2(x) * 0.5)


class ConformerCtc(Module):
    def __init__(self, cfg: ConformerConfig, rng: np.random.Generator,
                 dropout_rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.cfg = cfg
        self.input_norm = BatchNorm(cfg.n_bins, axis=2)
        self.subsample = ConvSubsampling(cfg.n_bins, cfg.d_model, rng, cfg.dropout, dropout_rng)
        self.blocks = [ConformerBlock(cfg, rng, dropout_rng) for _ in range(cfg.num_blocks)]
        self.ctc_head = Linear(cfg.d_model, cfg.vocab_size + 1, rng)
        # an untrained head emits blanks, so its decodes are (near) empty
        self.ctc_head.bias.data[0] = cfg.blank_bias

    @property
    def vocab_size(self) -> int:
        return self.cfg.vocab_size

    def encode(self, x_in: Tensor, lengths: Optional[np.ndarray] = None) -> EncoderOutput:
        """(B, T, Q) features -> encoder output O (B, T', d_model) and logits (B, T', V+1)."""
        if x_in.ndim != 3 or x_in.shape[2] != self.cfg.n_bins:
            raise ShapeError("conformer", x_in.shape, (self.cfg.n_bins,), "expected (batch, T, Q)")
        B, T, _ = x_in.shape
        lengths = np.full(B, T, dtype=np.int64) if lengths is None else np.asarray(lengths)
        h = self.subsample(self.input_norm(x_in))
        Tp = h.shape[1]
        out_lengths = np.minimum(subsampled_lengths(lengths), Tp)
        mask = np.arange(Tp)[None, :] < out_lengths[:, None]
        h = h + sinusoidal_positions(Tp, self.cfg.d_model)[None, :, :]
        for block in self.blocks:
            h = block(h, mask)
        return EncoderOutput(O=h, logits=self.ctc_head(h), lengths=out_lengths)

    def forward(self, x_in: Tensor, lengths: Optional[np.ndarray] = None) -> EncoderOutput:
        return self.encode(x_in, lengths)
