import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from evsnet import ConfigError, ShapeError
from evsnet.fusion import (
    ARRANGEMENTS, ChannelAttention, MotionFusionModule, SpatialAttention, resolve_arrangement,
)
from oracles import channel_attention_oracle, fd_check, spatial_attention_oracle

D = torch.float64


def _pair(C, H, W, seed=0):
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(1, C, H, W, generator=g, dtype=D),
            torch.randn(1, C, H, W, generator=g, dtype=D))


@pytest.mark.parametrize("C,H,W,qk_norm", [(2, 2, 2, True), (3, 3, 3, True), (3, 3, 3, False),
                                           (1, 4, 3, True)])
def test_channel_attention_matches_oracle(C, H, W, qk_norm):
    torch.manual_seed(C * 10 + H)
    layer = ChannelAttention(C, residual=False, qk_norm=qk_norm, temperature=0.7).double()
    img, mot = _pair(C, H, W)
    out, attn = layer.attend(img, mot)
    want_out, want_attn = channel_attention_oracle(layer, img[0].numpy(), mot[0].numpy())
    assert np.max(np.abs(attn[0].detach().numpy() - want_attn)) < 1e-10
    assert np.max(np.abs(out[0].detach().numpy() - want_out)) < 1e-10
    assert torch.equal(layer(img, mot), out)


def test_single_channel_attention_is_one():
    layer = ChannelAttention(1).double()
    _, attn = layer.attend(*_pair(1, 3, 3))
    assert attn.shape == (1, 1, 1) and attn.item() == 1.0


def test_residual_adds_input():
    torch.manual_seed(0)
    layer = ChannelAttention(3).double()
    img, mot = _pair(3, 4, 4)
    pre, _ = layer.attend(img, mot)
    assert torch.allclose(layer(img, mot), img + pre, atol=0, rtol=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 10_000), st.floats(0.05, 20.0))
def test_attention_rows_are_distributions(C, S, seed, temp):
    torch.manual_seed(seed)
    layer = ChannelAttention(C, temperature=temp).double()
    _, attn = layer.attend(*_pair(C, S, S, seed))
    assert torch.all(attn >= 0)
    assert torch.max(torch.abs(attn.sum(-1) - 1)) < 1e-6


def test_column_softmax_option():
    torch.manual_seed(0)
    layer = ChannelAttention(3, softmax_axis=-2).double()
    _, attn = layer.attend(*_pair(3, 3, 3))
    assert torch.max(torch.abs(attn.sum(-2) - 1)) < 1e-12
    with pytest.raises(ConfigError):
        ChannelAttention(3, softmax_axis=0)


def test_temperature_scaling_of_logits():
    torch.manual_seed(5)
    a = ChannelAttention(3, temperature=1.0).double()
    b = ChannelAttention(3, temperature=2.0).double()
    b.load_state_dict({**a.state_dict(), "log_temperature": torch.tensor(math.log(2.0), dtype=D)})
    img, mot = _pair(3, 3, 3, 1)
    _, pa = a.attend(img, mot)
    _, pb = b.attend(img, mot)
    # softmax(z / 2) is the row-renormalised square root of softmax(z)
    root = pa.sqrt()
    assert torch.max(torch.abs(pb - root / root.sum(-1, keepdim=True))) < 1e-12


def test_qk_norm_bounds_logits():
    torch.manual_seed(2)
    layer = ChannelAttention(4, temperature=1.0).double()
    img, mot = _pair(4, 5, 5)
    q, k, _ = layer.qkv(img * 1e3, mot * 1e3)
    assert torch.max(torch.abs(k @ q)) <= 1 + 1e-12


def test_channel_shape_errors():
    layer = ChannelAttention(2)
    with pytest.raises(ShapeError):
        layer(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 4, 5))
    with pytest.raises(ShapeError):
        layer(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 4))


def test_channel_macs_recorded():
    layer = ChannelAttention(3)
    layer(torch.zeros(2, 3, 4, 5), torch.zeros(2, 3, 4, 5))
    assert layer.last_macs == 2 * 2 * 9 * 20


@pytest.mark.parametrize("C,H,W", [(2, 2, 2), (3, 3, 3), (4, 8, 9)])
def test_spatial_attention_matches_oracle(C, H, W):
    torch.manual_seed(C)
    layer = SpatialAttention().double()
    img, mot = _pair(C, H, W, 3)
    want_out, want_map = spatial_attention_oracle(layer, img[0].numpy(), mot[0].numpy())
    assert np.max(np.abs(layer.attention_map(img, mot)[0, 0].detach().numpy() - want_map)) < 1e-10
    assert np.max(np.abs(layer(img, mot)[0].detach().numpy() - want_out)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 10_000))
def test_spatial_gate_never_grows_features(C, S, seed):
    torch.manual_seed(seed)
    layer = SpatialAttention().double()
    img, mot = _pair(C, S, S, seed)
    img = img * 10
    a = layer.attention_map(img, mot)
    assert torch.all((a >= 0) & (a <= 1))
    assert torch.all(layer(img, mot).abs() <= img.abs())


def test_spatial_shape_error():
    with pytest.raises(ShapeError):
        SpatialAttention()(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 5, 4))


def test_arrangement_names():
    assert resolve_arrangement("channel") == "channel_only"
    assert resolve_arrangement("spatial") == "spatial_only"
    with pytest.raises(ConfigError):
        resolve_arrangement("sequential")


def test_arrangements_compose_submodules():
    torch.manual_seed(0)
    img, mot = _pair(3, 4, 4, 7)
    mods = {a: MotionFusionModule(3, a).double() for a in ARRANGEMENTS}
    ref = mods["channel_then_spatial"]
    for m in mods.values():
        if hasattr(m, "channel"):
            m.channel.load_state_dict(ref.channel.state_dict())
        if hasattr(m, "spatial"):
            m.spatial.load_state_dict(ref.spatial.state_dict())
    ch, sp = ref.channel, ref.spatial
    assert not hasattr(mods["channel_only"], "spatial")
    assert not hasattr(mods["spatial_only"], "channel")
    with torch.no_grad():
        assert torch.equal(mods["channel_only"](img, mot), ch(img, mot))
        assert torch.equal(mods["spatial_only"](img, mot), sp(img, mot))
        assert torch.equal(ref(img, mot), sp(ch(img, mot), mot))
        assert torch.equal(mods["spatial_then_channel"](img, mot), ch(sp(img, mot), mot))
        avg = 0.5 * (ch(img, mot) + sp(img, mot))
        assert torch.allclose(mods["parallel"](img, mot), avg, atol=1e-15)


def test_channel_attention_gradient_check():
    torch.manual_seed(1)
    for qk_norm in (True, False):
        layer = ChannelAttention(2, qk_norm=qk_norm, temperature=1.3).double()
        img, mot = _pair(2, 3, 3, 2)
        img.requires_grad_(True)
        mot.requires_grad_(True)
        err = fd_check(lambda: layer(img, mot), [img, mot] + list(layer.parameters()))
        assert err < 1e-4


def test_spatial_attention_gradient_check():
    torch.manual_seed(1)
    layer = SpatialAttention().double()
    img, mot = _pair(2, 4, 4, 4)
    img.requires_grad_(True)
    mot.requires_grad_(True)
    err = fd_check(lambda: layer(img, mot), [img, mot] + list(layer.parameters()),
                   max_per_tensor=60)
    assert err < 1e-4
