import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from evsnet import NumericError, ShapeError
from evsnet.decoder import CrossFrameAttention, TemporalDecoder, predict_mask
from oracles import argmax_oracle, fd_check

D = torch.float64


def _layernorm(v, w, b, eps=1e-5):
    m = sum(v) / len(v)
    var = sum((x - m) ** 2 for x in v) / len(v)
    return [w[i] * (v[i] - m) / math.sqrt(var + eps) + b[i] for i in range(len(v))]


def _linear(v, lin):
    W = lin.weight.detach().numpy()
    b = lin.bias.detach().numpy()
    return [b[o] + sum(W[o, c] * v[c] for c in range(len(v))) for o in range(len(W))]


def block_oracle(block, x):
    """Loop version of one attention block for a single sample x (T, C, H, W)."""
    T, C, H, W = x.shape
    r = block.window // 2
    nw, nb = block.norm.weight.detach().numpy(), block.norm.bias.detach().numpy()
    y = np.empty((T, H, W, C))
    for t in range(T):
        for i in range(H):
            for j in range(W):
                y[t, i, j] = _layernorm(list(x[t, :, i, j]), nw, nb)
    out = x.copy()
    for t in range(T):
        for i in range(H):
            for j in range(W):
                q = _linear(y[t, i, j], block.q)
                logits, vals = [], []
                for s in range(T):
                    for di in range(-r, r + 1):
                        for dj in range(-r, r + 1):
                            ii, jj = i + di, j + dj
                            if 0 <= ii < H and 0 <= jj < W:
                                k = _linear(y[s, ii, jj], block.k)
                                logits.append(sum(a * b for a, b in zip(q, k)) / math.sqrt(C))
                                vals.append(_linear(y[s, ii, jj], block.v))
                mx = max(logits)
                e = [math.exp(z - mx) for z in logits]
                tot = sum(e)
                mixed = [sum(e[n] / tot * vals[n][c] for n in range(len(e))) for c in range(C)]
                out[t, :, i, j] += _linear(mixed, block.proj)
    return out


def test_block_matches_loop_oracle():
    torch.manual_seed(0)
    block = CrossFrameAttention(3).double()
    with torch.no_grad():
        block.norm.weight.uniform_(0.5, 1.5)
        block.norm.bias.uniform_(-0.2, 0.2)
    x = torch.randn(1, 2, 3, 4, 3, dtype=D)
    got = block(x)[0].detach().numpy()
    assert np.max(np.abs(got - block_oracle(block, x[0].numpy()))) < 1e-10


def test_attention_weights_sum_to_one_and_mask_outside():
    torch.manual_seed(0)
    block = CrossFrameAttention(4).double()
    _, attn = block.attend(torch.randn(2, 3, 4, 5, 5, dtype=D))
    assert attn.shape == (2, 3, 5, 5, 27)
    assert torch.max(torch.abs(attn.sum(-1) - 1)) < 1e-6
    # top-left corner: the neighbour above-left is outside the image in every frame
    assert torch.all(attn[:, :, 0, 0, 0::9] == 0)


def test_reference_order_does_not_change_current_frame():
    torch.manual_seed(1)
    block = CrossFrameAttention(3).double()
    x = torch.randn(1, 4, 3, 4, 4, dtype=D)
    perm = x[:, [0, 3, 1, 2]]
    assert torch.allclose(block(x)[:, 0], block(perm)[:, 0], atol=1e-12)


def test_single_frame_decoder():
    torch.manual_seed(0)
    dec = TemporalDecoder(8, 5, num_frames=1)
    assert dec(torch.randn(2, 1, 8, 4, 4)).shape == (2, 5, 16, 16)


def test_decoder_shapes_and_frame_check():
    torch.manual_seed(0)
    dec = TemporalDecoder(8, 5, num_frames=4)
    assert dec(torch.randn(1, 4, 8, 16, 16)).shape == (1, 5, 64, 64)
    with pytest.raises(ShapeError):
        dec(torch.randn(1, 3, 8, 16, 16))


def test_decoder_block_gradient_check():
    torch.manual_seed(3)
    block = CrossFrameAttention(2).double()
    x = torch.randn(1, 2, 2, 3, 3, dtype=D, requires_grad=True)
    assert fd_check(lambda: block(x), [x] + list(block.parameters())) < 1e-4


def test_decoder_gradient_check():
    torch.manual_seed(3)
    dec = TemporalDecoder(2, 3, num_frames=2, num_blocks=1).double()
    x = torch.randn(1, 2, 2, 3, 3, dtype=D, requires_grad=True)
    assert fd_check(lambda: dec(x), [x] + list(dec.parameters()), max_per_tensor=20) < 1e-4


def test_predict_mask_ties_go_to_lowest_index():
    logits = np.zeros((2, 2, 3))
    logits[0, 0] = [1, 1, 0]
    logits[1, 1] = [0, 2, 2]
    assert predict_mask(logits).tolist() == [[0, 0], [0, 1]]


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 4, 5), elements=st.sampled_from([-1.0, 0.0, 0.5, 1.0, 2.0])))
def test_predict_mask_matches_oracle(logits):
    assert np.array_equal(predict_mask(logits), argmax_oracle(logits))


def test_predict_mask_channel_axis_and_nan():
    t = torch.randn(2, 5, 4, 4)
    assert np.array_equal(predict_mask(t, axis=1), t.argmax(1).numpy())
    with pytest.raises(NumericError):
        predict_mask(np.array([[[0.0, np.nan]]]))
