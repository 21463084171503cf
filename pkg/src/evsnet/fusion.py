"""Event-guided fusion of image features with motion features.

``ChannelAttention`` forms a C x C attention matrix whose query comes from the motion
features and whose key/value come from the image features. ``SpatialAttention`` gates
the result with a (0, 1) map computed from channel-pooled statistics of both inputs.
"""

from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F

from ._validation import ConfigError, ShapeError

ARRANGEMENTS = ("channel_only", "spatial_only", "spatial_then_channel", "parallel",
                "channel_then_spatial")
ARRANGEMENT_ALIASES = {"channel": "channel_only", "spatial": "spatial_only"}
DEFAULT_ARRANGEMENT = "channel_then_spatial"


def resolve_arrangement(key):
    key = ARRANGEMENT_ALIASES.get(key, key)
    if key not in ARRANGEMENTS:
        raise ConfigError(f"unknown fusion arrangement {key!r}; choose from {ARRANGEMENTS}")
    return key


class DepthwisePair(nn.Module):
    """Parallel 3x3 and 5x5 depthwise convolutions, concatenated to 2C channels."""

    def __init__(self, dim):
        super().__init__()
        self.f3 = nn.Conv2d(dim, dim, 3, padding=1, groups=dim)
        self.f4 = nn.Conv2d(dim, dim, 5, padding=2, groups=dim)

    def forward(self, x):
        return torch.cat([self.f3(x), self.f4(x)], dim=1)


def attention_matrix(key, query, temperature, axis=-1):
    """softmax((K @ Q) / temperature) for K (N, C, HW) and Q (N, HW, C)."""
    return torch.softmax((key @ query) / temperature, dim=axis)


class ChannelAttention(nn.Module):
    """Cross-modal channel attention without a feed-forward sub-block.

    ``qk_norm`` L2-normalizes query and key along the pixel axis before the product,
    keeping the logits bounded independently of the map size.
    """

    def __init__(self, dim, residual=True, qk_norm=True, softmax_axis=-1, temperature=1.0):
        super().__init__()
        if softmax_axis not in (-1, -2):
            raise ConfigError(f"softmax_axis must be -1 or -2, got {softmax_axis}")
        self.dim = dim
        self.residual = residual
        self.qk_norm = qk_norm
        self.softmax_axis = softmax_axis
        self.motion_dw = DepthwisePair(dim)
        self.image_dw = DepthwisePair(dim)
        self.w_q = nn.Conv2d(2 * dim, dim, 1)
        self.w_k = nn.Conv2d(2 * dim, dim, 1)
        self.w_v = nn.Conv2d(2 * dim, dim, 1)
        # stored in log space so the temperature stays positive
        self.log_temperature = nn.Parameter(torch.tensor(math.log(temperature)))
        self.last_macs = 0

    @property
    def temperature(self):
        return self.log_temperature.exp()

    def qkv(self, image, motion):
        img = self.image_dw(image)
        q = self.w_q(self.motion_dw(motion)).flatten(2).transpose(1, 2)  # (N, HW, C)
        k = self.w_k(img).flatten(2)  # (N, C, HW)
        v = self.w_v(img).flatten(2).transpose(1, 2)  # (N, HW, C)
        if self.qk_norm:
            q = F.normalize(q, dim=1)
            k = F.normalize(k, dim=-1)
        return q, k, v

    def attend(self, image, motion):
        """Return (pre-residual output, attention matrix)."""
        if image.shape != motion.shape:
            raise ShapeError(f"image {tuple(image.shape)} and motion {tuple(motion.shape)} differ")
        if image.shape[1] != self.dim:
            raise ShapeError(f"expected {self.dim} channels, got {image.shape[1]}")
        N, C, H, W = image.shape
        q, k, v = self.qkv(image, motion)
        attn = attention_matrix(k, q, self.temperature, self.softmax_axis)
        out = (v @ attn).transpose(1, 2).reshape(N, C, H, W)
        self.last_macs = 2 * N * C * C * H * W
        return out, attn

    def forward(self, image, motion):
        out, _ = self.attend(image, motion)
        return image + out if self.residual else out


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(4, 1, kernel_size, padding=kernel_size // 2)

    @staticmethod
    def pooled_maps(image, motion):
        return torch.cat([
            image.amax(dim=1, keepdim=True), image.mean(dim=1, keepdim=True),
            motion.amax(dim=1, keepdim=True), motion.mean(dim=1, keepdim=True),
        ], dim=1)

    def attention_map(self, image, motion):
        if image.shape[-2:] != motion.shape[-2:] or image.shape[0] != motion.shape[0]:
            raise ShapeError(f"image {tuple(image.shape)} and motion {tuple(motion.shape)} differ")
        return torch.sigmoid(self.conv(self.pooled_maps(image, motion)))

    def forward(self, image, motion):
        return image * self.attention_map(image, motion)


class MotionFusionModule(nn.Module):
    def __init__(self, dim, arrangement=DEFAULT_ARRANGEMENT, residual=True, qk_norm=True,
                 softmax_axis=-1):
        super().__init__()
        self.arrangement = resolve_arrangement(arrangement)
        if self.arrangement != "spatial_only":
            self.channel = ChannelAttention(dim, residual, qk_norm, softmax_axis)
        if self.arrangement != "channel_only":
            self.spatial = SpatialAttention()

    def forward(self, image, motion):
        a = self.arrangement
        if a == "channel_only":
            return self.channel(image, motion)
        if a == "spatial_only":
            return self.spatial(image, motion)
        if a == "channel_then_spatial":
            return self.spatial(self.channel(image, motion), motion)
        if a == "spatial_then_channel":
            return self.channel(self.spatial(image, motion), motion)
        return 0.5 * (self.channel(image, motion) + self.spatial(image, motion))
