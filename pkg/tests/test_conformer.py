import numpy as np
import pytest

from mcg_asr.config import ConformerConfig
from mcg_asr.errors import ShapeError
from mcg_asr.losses.ctc import ctc_loss
from mcg_asr.metrics import batch_greedy_decode
from mcg_asr.models.conformer import (MIN_FRAMES, ConformerBlock, ConformerCtc, MultiHeadSelfAttention,
                                      subsampled_length, subsampled_lengths)
from mcg_asr.numerics import functional as F
from mcg_asr.numerics.gradcheck import check_gradients
from mcg_asr.numerics.nn import Linear
from mcg_asr.numerics.tensor import Tensor, no_grad


def _cfg(**kw):
    base = dict(num_blocks=1, d_model=8, ffn_units=16, heads=2, conv_kernel=3, vocab_size=3, n_bins=8)
    base.update(kw)
    return ConformerConfig(**base)


def test_subsampled_length():
    assert subsampled_length(100) == 25
    assert subsampled_length(8) == 2
    assert subsampled_length(9) == 3
    assert subsampled_lengths([100, 8, 9, 1]).tolist() == [25, 2, 3, 1]


def test_encoder_output_shapes(rng):
    model = ConformerCtc(_cfg(n_bins=80), np.random.default_rng(0))
    with no_grad():
        out = model(Tensor(rng.standard_normal((2, 100, 80))), np.array([100, 60]))
    assert out.O.shape == (2, 25, 8)
    assert out.logits.shape == (2, 25, 4)
    np.testing.assert_array_equal(out.lengths, [25, 15])


def test_too_few_frames():
    model = ConformerCtc(_cfg(), np.random.default_rng(0))
    with pytest.raises(ShapeError) as ctx:
        model(Tensor(np.zeros((1, MIN_FRAMES - 1, 8))))
    assert str(MIN_FRAMES) in str(ctx.value)


def test_single_frame_attention_is_value_projection(rng):
    mhsa = MultiHeadSelfAttention(8, 2, np.random.default_rng(0))
    x = Tensor(rng.standard_normal((3, 1, 8)))
    np.testing.assert_allclose(mhsa.attend(x).data, mhsa.v(x).data, rtol=1e-6, atol=1e-7)


def test_zeroed_sublayers_reduce_block_to_layer_norm(float64, rng):
    block = ConformerBlock(_cfg(), np.random.default_rng(0))
    for name, p in block.named_parameters():
        if not name.startswith("norm."):
            p.data[...] = 0.0
    x = Tensor(rng.standard_normal((2, 5, 8)))
    expected = F.layer_norm(x, block.norm.gamma, block.norm.beta).data
    np.testing.assert_allclose(block(x).data, expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("batch,frames,heads", [(2, 5, 2), (1, 3, 1), (3, 7, 4)])
def test_block_gradients(float64, rng, batch, frames, heads):
    block = ConformerBlock(_cfg(heads=heads), np.random.default_rng(frames))
    x = Tensor(rng.standard_normal((batch, frames, 8)), requires_grad=True)
    weights = Tensor(rng.standard_normal((batch, frames, 8)))
    params = [x, block.ffn1.w1.weight, block.mhsa.q.weight, block.mhsa.v.weight,
              block.conv.depthwise.weight, block.conv.bn.gamma, block.ffn2.w2.weight]
    assert check_gradients(lambda: (block(x) * weights).sum(), params) < 1e-4


def test_untrained_head_prefers_blank(rng):
    model = ConformerCtc(_cfg(), np.random.default_rng(0)).eval()
    assert model.ctc_head.bias.data[0] == 3.0
    with no_grad():
        out = model(Tensor(rng.standard_normal((2, 40, 8))))
    assert batch_greedy_decode(out.logits, out.lengths) == [[], []]


def test_eval_mode_is_batch_independent(rng):
    model = ConformerCtc(_cfg(), np.random.default_rng(0)).eval()
    x = rng.standard_normal((1, 12, 8))
    single = model(Tensor(x)).logits.data
    double = model(Tensor(np.concatenate([x, x]))).logits.data
    np.testing.assert_allclose(double[0], single[0], rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(double[1], single[0], rtol=1e-5, atol=1e-6)


def test_zero_head_gives_uniform_posterior(rng):
    model = ConformerCtc(_cfg(), np.random.default_rng(0)).eval()
    model.ctc_head.weight.data[...] = 0.0
    model.ctc_head.bias.data[...] = 0.0
    probs = F.softmax(model(Tensor(rng.standard_normal((1, 12, 8)))).logits, axis=-1).data
    np.testing.assert_allclose(probs, np.full(probs.shape, 0.25), rtol=1e-6)


def test_head_is_a_plain_linear_map(float64):
    head = Linear(1, 2, np.random.default_rng(0))
    head.weight.data[...] = [[0.0, 1.0]]
    head.bias.data[...] = 0.0
    o = Tensor(np.array([[[0.3], [-1.2]]]))
    np.testing.assert_array_equal(head(o).data[..., 1], o.data[..., 0])


def test_head_and_ctc_gradients(float64, rng):
    head = Linear(8, 4, np.random.default_rng(0))
    o = Tensor(rng.standard_normal((2, 5, 8)), requires_grad=True)
    fn = lambda: ctc_loss(head(o), [[1, 2], [3]], [5, 4])  # noqa: E731
    assert check_gradients(fn, [o, head.weight, head.bias]) < 1e-4
