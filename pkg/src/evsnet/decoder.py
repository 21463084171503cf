"""Cross-frame local-window attention decoder.

Every query pixel of every frame attends to a 3x3 neighbourhood around the same site
in all ``l + 1`` frames. After the blocks, the current frame (index 0) is classified
and its logits are bilinearly upsampled x4 to input resolution.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ._validation import NumericError, ShapeError


class CrossFrameAttention(nn.Module):
    """One pre-norm attention block with a residual connection. Input (B, T, C, H, W)."""

    def __init__(self, dim, window=3):
        super().__init__()
        self.dim = dim
        self.window = window
        self.norm = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)
        self.last_macs = 0

    def _neighbours(self, x):
        # (B, T, H, W, C) -> (B, H, W, T * window**2, C)
        B, T, H, W, C = x.shape
        win = self.window**2
        cols = F.unfold(x.permute(0, 1, 4, 2, 3).reshape(B * T, C, H, W), self.window,
                        padding=self.window // 2)
        cols = cols.view(B, T, C, win, H, W)
        return cols.permute(0, 4, 5, 1, 3, 2).reshape(B, H, W, T * win, C)

    def attend(self, x):
        """Return (block output, attention weights of shape (B, T, H, W, T * window**2))."""
        B, T, C, H, W = x.shape
        y = self.norm(x.permute(0, 1, 3, 4, 2))
        q = self.q(y)
        k = self._neighbours(self.k(y))
        v = self._neighbours(self.v(y))
        ones = torch.ones(1, 1, H, W, dtype=x.dtype, device=x.device)
        valid = F.unfold(ones, self.window, padding=self.window // 2).view(-1, H, W) > 0
        valid = valid.permute(1, 2, 0).repeat(1, 1, T)  # (H, W, T * win)
        logits = torch.einsum("bthwc,bhwsc->bthws", q, k) / math.sqrt(C)
        logits = logits.masked_fill(~valid, float("-inf"))
        attn = torch.softmax(logits, dim=-1)
        out = self.proj(torch.einsum("bthws,bhwsc->bthwc", attn, v))
        self.last_macs = 2 * B * T * H * W * attn.shape[-1] * C
        return x + out.permute(0, 1, 4, 2, 3), attn

    def forward(self, x):
        return self.attend(x)[0]


class TemporalDecoder(nn.Module):
    def __init__(self, dim, num_classes, num_frames, num_blocks=2, window=3, upsample=4):
        super().__init__()
        self.num_frames = num_frames
        self.upsample = upsample
        self.temporal_embed = nn.Parameter(torch.randn(num_frames, dim) * 0.02)
        self.blocks = nn.ModuleList(CrossFrameAttention(dim, window) for _ in range(num_blocks))
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Conv2d(dim, num_classes, 1)

    def features(self, fused):
        if fused.shape[1] != self.num_frames:
            raise ShapeError(f"expected {self.num_frames} frames (l + 1), got {fused.shape[1]}")
        x = fused + self.temporal_embed[None, :, :, None, None]
        for block in self.blocks:
            x = block(x)
        return x

    def forward(self, fused):
        cur = self.features(fused)[:, 0]
        cur = self.norm(cur.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
        logits = self.head(cur)
        if self.upsample != 1:
            logits = F.interpolate(logits, scale_factor=self.upsample, mode="bilinear",
                                   align_corners=False)
        return logits


def predict_mask(logits, axis=-1):
    """Per-pixel argmax; ties go to the lowest class index."""
    if isinstance(logits, torch.Tensor):
        logits = logits.detach().cpu().numpy()
    logits = np.asarray(logits)
    if np.isnan(logits).any():
        raise NumericError("NaN in logits")
    # np.argmax returns the first maximal index
    return np.argmax(logits, axis=axis)
