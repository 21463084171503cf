"""Motion extraction from event frames.

Event frames go through a small encoder (short-term motion ``F_E``), then a temporal
convolutional block produces long-term motion ``F_M``:

    F_M = ReLU(tau4(AvgPool(tau3(f2(tau2(f1(tau1(F_E))))) + F_E)))

and the two are concatenated and projected: ``F_m = tau5(F_E ++ F_M)``.

Sequences are (B, T, C, H, W) with index 0 the current frame and later indices going
back in time, so the 2-frame temporal kernels combine a frame with its predecessor.
Temporal padding replicates the oldest frame.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn
import torch.nn.functional as F

from ._validation import ConfigError, ShapeError
from .encoder import ImageEncoder

POOL_MODES = ("temporal", "global_broadcast")


class MotionFeatures(NamedTuple):
    short_term: torch.Tensor  # F_E
    long_term: torch.Tensor  # F_M
    fused: torch.Tensor  # F_m


def _pad_past(x, n=1):
    # x: (B, C, T, H, W); repeat the last (oldest) frame n times
    return F.pad(x, (0, 0, 0, 0, 0, n), mode="replicate") if n else x


def pointwise3d(cin, cout):
    return nn.Conv3d(cin, cout, kernel_size=1)


class EventEncoder(nn.Module):
    """Per-frame event features at 1/4 scale, shared across the sequence."""

    def __init__(self, widths=(8, 16, 32, 64), dim=32, num_frames=None):
        super().__init__()
        self.backbone = ImageEncoder(in_channels=1, widths=widths, dim=dim)
        self.num_frames = num_frames

    def forward(self, event_frames):
        B, T = event_frames.shape[:2]
        if self.num_frames is not None and T != self.num_frames:
            raise ShapeError(f"expected {self.num_frames} event frames (l + 1), got {T}")
        feats = self.backbone(event_frames.flatten(0, 1))
        return feats.unflatten(0, (B, T))


class TemporalConvBlock(nn.Module):
    def __init__(self, dim, hidden=None, pool_mode="temporal"):
        super().__init__()
        if pool_mode not in POOL_MODES:
            raise ConfigError(f"unknown pool_mode {pool_mode!r}; choose from {POOL_MODES}")
        hidden = hidden or dim
        self.pool_mode = pool_mode
        self.tau1 = pointwise3d(dim, hidden)
        self.f1 = nn.Conv3d(hidden, hidden, (2, 3, 3), padding=(0, 1, 1))
        self.tau2 = pointwise3d(hidden, hidden)
        self.f2 = nn.Conv3d(hidden, hidden, (1, 3, 3), padding=(0, 1, 1))
        self.tau3 = pointwise3d(hidden, dim)
        self.tau4 = pointwise3d(dim, dim)

    def pool(self, x):
        x = _pad_past(x)
        if self.pool_mode == "temporal":
            return F.avg_pool3d(x, kernel_size=(2, 1, 1), stride=1)
        H, W = x.shape[-2:]
        pooled = F.avg_pool3d(x, kernel_size=(2, H, W), stride=1)
        return pooled.expand(-1, -1, -1, H, W)

    def pre_pool(self, x):
        """Skip-added activations before pooling; x is (B, C, T, H, W)."""
        h = self.f1(_pad_past(self.tau1(x)))
        h = self.tau3(self.f2(self.tau2(h)))
        return h + x

    def forward(self, short_term):
        if short_term.shape[1] < 2:
            raise ShapeError(f"temporal block needs T >= 2 frames, got {short_term.shape[1]}")
        x = short_term.transpose(1, 2)
        out = F.relu(self.tau4(self.pool(self.pre_pool(x))))
        return out.transpose(1, 2)


class MotionProjection(nn.Module):
    """Concatenate short- and long-term features on channels and project 2C -> C'."""

    def __init__(self, dim, out_dim=None):
        super().__init__()
        self.tau = pointwise3d(2 * dim, out_dim or dim)

    def forward(self, short_term, long_term):
        if short_term.shape != long_term.shape:
            raise ShapeError(f"F_E {tuple(short_term.shape)} != F_M {tuple(long_term.shape)}")
        x = torch.cat([short_term, long_term], dim=2).transpose(1, 2)
        return self.tau(x).transpose(1, 2)


class MotionExtractionModule(nn.Module):
    def __init__(self, dim=32, widths=(8, 16, 32, 64), num_frames=None, compression=2,
                 pool_mode="temporal"):
        super().__init__()
        self.encoder = EventEncoder(widths, dim, num_frames)
        self.temporal = TemporalConvBlock(dim, max(1, dim // compression), pool_mode)
        self.project = MotionProjection(dim, dim)

    def forward(self, event_frames):
        fe = self.encoder(event_frames)
        fm_long = self.temporal(fe)
        return MotionFeatures(fe, fm_long, self.project(fe, fm_long))
