"""The full network: image encoder, motion extraction, fusion and temporal decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import torch
from torch import nn

from ._validation import ConfigError, ShapeError
from .decoder import TemporalDecoder
from .encoder import ImageEncoder
from .fusion import MotionFusionModule, resolve_arrangement
from .motion import MotionExtractionModule

NO_FUSION = "no_fusion"


@dataclass
class ModelConfig:
    num_classes: int = 5
    num_refs: int = 3
    dim: int = 32
    image_widths: tuple = (16, 32, 64, 128)
    event_widths: tuple = (8, 16, 32, 64)
    arrangement: str = "channel_then_spatial"
    pool_mode: str = "temporal"
    compression: int = 2
    residual: bool = True
    qk_norm: bool = True
    softmax_axis: int = -1
    decoder_blocks: int = 2
    window: int = 3
    input_size: tuple = field(default=(64, 64))

    def __post_init__(self):
        self.image_widths = tuple(self.image_widths)
        self.event_widths = tuple(self.event_widths)
        self.input_size = tuple(self.input_size)
        if self.arrangement != NO_FUSION:
            self.arrangement = resolve_arrangement(self.arrangement)
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.num_refs < 0:
            raise ConfigError("num_refs must be >= 0")

    @property
    def num_frames(self):
        return self.num_refs + 1

    @property
    def uses_events(self):
        return self.arrangement != NO_FUSION

    def to_dict(self):
        d = asdict(self)
        d["image_widths"] = list(self.image_widths)
        d["event_widths"] = list(self.event_widths)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class EVSNet(nn.Module):
    """Segment the current frame of a (B, T, ...) window, T = l + 1, index 0 = current.

    With ``arrangement="no_fusion"`` the event branch is not built and events are
    ignored, which gives the image-only baseline.
    """

    def __init__(self, config=None):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        if cfg.num_refs == 0 and cfg.uses_events:
            raise ConfigError("the temporal block needs at least one reference frame")
        self.encoder = ImageEncoder(3, cfg.image_widths, cfg.dim)
        if cfg.uses_events:
            self.mem = MotionExtractionModule(cfg.dim, cfg.event_widths, cfg.num_frames,
                                              cfg.compression, cfg.pool_mode)
            self.mfm = MotionFusionModule(cfg.dim, cfg.arrangement, cfg.residual, cfg.qk_norm,
                                          cfg.softmax_axis)
        self.decoder = TemporalDecoder(cfg.dim, cfg.num_classes, cfg.num_frames,
                                       cfg.decoder_blocks, cfg.window)

    def fused_features(self, images, events=None):
        B, T = images.shape[:2]
        if T != self.config.num_frames:
            raise ShapeError(f"expected {self.config.num_frames} frames, got {T}")
        fi = self.encoder(images.flatten(0, 1))
        if not self.config.uses_events:
            return fi.unflatten(0, (B, T))
        if events is None:
            raise ShapeError("this model needs event frames")
        fm = self.mem(events).fused
        return self.mfm(fi, fm.flatten(0, 1)).unflatten(0, (B, T))

    def forward(self, images, events=None):
        return self.decoder(self.fused_features(images, events))


def build_model(config=None, seed=0, dtype=torch.float32):
    """Deterministically initialized model."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = EVSNet(config)
    return model.to(dtype)
