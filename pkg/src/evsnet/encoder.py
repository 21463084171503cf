"""Convolutional feature pyramid and the multi-scale mixer.

The pyramid has four stages at 1/4, 1/8, 1/16 and 1/32 of the input resolution; the
mixer projects every stage to a common width, upsamples to 1/4 and fuses them.
Tensors are channel-first (N, C, H, W) throughout.
"""

from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from ._validation import ShapeError

SCALES = (4, 8, 16, 32)


class ChannelNorm(nn.Module):
    """Per-sample, per-channel normalization over spatial positions with a learned affine.

    Unlike ``nn.InstanceNorm2d`` this accepts 1x1 maps (their output is just the shift).
    """

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mean = x.mean(dim=(-2, -1), keepdim=True)
        var = x.var(dim=(-2, -1), keepdim=True, unbiased=False)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class ConvBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.norm = ChannelNorm(cout)
        self.act = nn.GELU()

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class EncoderStage(nn.Module):
    """Two conv blocks; the first always halves resolution, the second too in the stem."""

    def __init__(self, cin, cout, stem=False):
        super().__init__()
        self.blocks = nn.Sequential(ConvBlock(cin, cout, 2), ConvBlock(cout, cout, 2 if stem else 1))

    def forward(self, x):
        return self.blocks(x)


class FeaturePyramid(nn.Module):
    def __init__(self, in_channels=3, widths=(16, 32, 64, 128)):
        super().__init__()
        if len(widths) != 4:
            raise ValueError(f"need 4 stage widths, got {widths}")
        chans = (in_channels,) + tuple(widths)
        self.stages = nn.ModuleList(
            EncoderStage(chans[i], chans[i + 1], stem=(i == 0)) for i in range(4)
        )

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class MultiScaleMixer(nn.Module):
    """Project each stage to ``dim`` channels, nearest-upsample to 1/4 scale, concat, fuse."""

    def __init__(self, widths, dim):
        super().__init__()
        self.proj = nn.ModuleList(nn.Conv2d(c, dim, 1) for c in widths)
        self.fuse = nn.Conv2d(len(widths) * dim, dim, 1)

    def forward(self, feats):
        if len(feats) != len(self.proj):
            raise ShapeError(f"expected {len(self.proj)} stage features, got {len(feats)}")
        h, w = feats[0].shape[-2:]
        for i, f in enumerate(feats):
            if f.shape[-2] * 2**i != h or f.shape[-1] * 2**i != w:
                raise ShapeError(
                    f"stage {i} has spatial size {tuple(f.shape[-2:])}, expected "
                    f"({h // 2**i}, {w // 2**i})"
                )
        ups = [
            F.interpolate(p(f), size=(h, w), mode="nearest") if i else p(f)
            for i, (p, f) in enumerate(zip(self.proj, feats))
        ]
        return self.fuse(torch.cat(ups, dim=1))


class ImageEncoder(nn.Module):
    """Frames (N, in_channels, H, W) -> mixed features (N, dim, H/4, W/4)."""

    def __init__(self, in_channels=3, widths=(16, 32, 64, 128), dim=32):
        super().__init__()
        self.pyramid = FeaturePyramid(in_channels, widths)
        self.mixer = MultiScaleMixer(widths, dim)

    def forward(self, x):
        H, W = x.shape[-2:]
        if H % 32 or W % 32:
            raise ShapeError(f"input size ({H}, {W}) must be divisible by 32")
        return self.mixer(self.pyramid(x))
