"""Training with AdamW under a poly learning-rate schedule, plus clip-level inference."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ._validation import ConfigError, NumericError
from .checkpoint import load_checkpoint, save_checkpoint
from .data import AugmentConfig, augment, reference_indices, sample_window
from .decoder import predict_mask
from .metrics import IGNORE_INDEX, evaluate_clips
from .model import ModelConfig, build_model

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    lr: float = 6e-5
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    power: float = 1.0
    total_iters: int = 200
    batch_size: int = 2
    num_refs: int = 3
    offsets: tuple = (3, 6, 9)
    crop_size: tuple | None = None
    flip: bool = True
    photometric: bool = True
    gamma_distortion: bool = True
    aux_ref_loss: bool = False
    seed: int = 0
    dtype: str = "float32"
    log_every: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        self.offsets = tuple(int(k) for k in self.offsets)
        self.betas = tuple(self.betas)
        if self.crop_size is not None:
            self.crop_size = tuple(int(c) for c in self.crop_size)
            if self.crop_size[0] % 32 or self.crop_size[1] % 32:
                raise ConfigError(f"crop_size {self.crop_size} must be divisible by 32")
        if len(self.offsets) != self.num_refs:
            raise ConfigError(f"{self.num_refs} reference frames need {self.num_refs} offsets, "
                              f"got {self.offsets}")
        if any(b <= a for a, b in zip(self.offsets, self.offsets[1:])) or (self.offsets and self.offsets[0] < 1):
            raise ConfigError(f"offsets must be positive and strictly increasing, got {self.offsets}")
        if self.lr < 0 or self.total_iters < 0 or self.batch_size < 1 or self.power <= 0:
            raise ConfigError("need lr >= 0, total_iters >= 0, batch_size >= 1 and power > 0")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def augment(self):
        return AugmentConfig(self.crop_size, self.flip, self.photometric, self.gamma_distortion)

    def to_dict(self):
        d = asdict(self)
        d["offsets"] = list(self.offsets)
        d["betas"] = list(self.betas)
        d["crop_size"] = list(self.crop_size) if self.crop_size else None
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def poly_lr(base_lr, it, total_iters, power=1.0):
    """``base_lr * (1 - it / total_iters) ** power``; zero from ``total_iters`` on."""
    if total_iters <= 0 or it >= total_iters:
        return 0.0
    return base_lr * (1.0 - it / total_iters) ** power


@dataclass
class TrainResult:
    model: torch.nn.Module
    losses: list
    lrs: list
    checkpoint: Path | None = None


def _to_tensor(a, dtype):
    return torch.from_numpy(np.ascontiguousarray(a)).to(dtype)


def make_batch(data, picks, offsets, rng, aug, dtype):
    imgs, evs, masks = [], [], []
    for clip, t in picks:
        im, ev, m = sample_window(data, clip, t, offsets)
        im, ev, m = augment(im, ev, m, rng, aug)
        imgs.append(im)
        evs.append(ev)
        masks.append(m)
    images = _to_tensor(np.stack(imgs), dtype).permute(0, 1, 4, 2, 3)
    events = _to_tensor(np.stack(evs), dtype).permute(0, 1, 4, 2, 3)
    return images, events, torch.from_numpy(np.stack(masks).astype(np.int64))


def _dump_batch(path, images, events, masks, it):
    np.savez(path, images=images.detach().numpy(), events=events.detach().numpy(),
             masks=masks.numpy(), iteration=it)


def train(train_cfg, model_cfg, dataset, out_dir=None):
    """Train on the ``train`` split of ``dataset`` (a :class:`ClipDataset`).

    Writes ``train_log.csv`` and checkpoints under ``out_dir`` when given. The math path
    is single-threaded and seeded, so a run is reproducible bit for bit.
    """
    if model_cfg.num_refs != train_cfg.num_refs:
        raise ConfigError(f"model expects l={model_cfg.num_refs} references, train config has "
                          f"l={train_cfg.num_refs}")
    dtype = DTYPES[train_cfg.dtype]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(train_cfg.seed)
    model = build_model(model_cfg, train_cfg.seed, dtype)
    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr, betas=train_cfg.betas,
                            weight_decay=train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    clips = dataset.indices("train") or list(range(len(dataset.masks)))
    T = dataset.masks.shape[1]
    aug = train_cfg.augment
    losses, lrs = [], []
    log_rows = []
    model.train()
    for it in range(train_cfg.total_iters):
        lr = poly_lr(train_cfg.lr, it, train_cfg.total_iters, train_cfg.power)
        for group in opt.param_groups:
            group["lr"] = lr
        picks = [(clips[int(rng.integers(len(clips)))], int(rng.integers(T)))
                 for _ in range(train_cfg.batch_size)]
        images, events, masks = make_batch(dataset, picks, train_cfg.offsets, rng, aug, dtype)
        logits = model(images, events if model_cfg.uses_events else None)
        loss = F.cross_entropy(logits, masks, ignore_index=IGNORE_INDEX)
        if not torch.isfinite(loss):
            if out is not None:
                _dump_batch(out / "nan_batch.npz", images, events, masks, it)
            raise NumericError(f"non-finite loss {loss.item()} at iteration {it} (clips/frames {picks})")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(loss.item())
        lrs.append(lr)
        if it % train_cfg.log_every == 0 or it == train_cfg.total_iters - 1:
            log_rows.append((it, lr, loss.item()))
        if out is not None and train_cfg.checkpoint_every and (it + 1) % train_cfg.checkpoint_every == 0:
            save_model(out / f"ckpt_{it + 1:06d}", model, train_cfg, it + 1)
    ckpt = None
    if out is not None:
        with open(out / "train_log.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iter", "lr", "loss"])
            for it, lr, loss in log_rows:
                w.writerow([it, repr(lr), repr(loss)])
        ckpt = save_model(out / "checkpoint", model, train_cfg, train_cfg.total_iters)
    model.eval()
    return TrainResult(model, losses, lrs, ckpt)


def save_model(directory, model, train_cfg=None, iteration=None):
    meta = {"model_config": model.config.to_dict(), "iteration": iteration}
    if train_cfg is not None:
        meta["train_config"] = train_cfg.to_dict()
    return save_checkpoint(directory, model.state_dict(), meta)


def load_model(directory, dtype=None):
    state, meta = load_checkpoint(directory)
    cfg = ModelConfig.from_dict(meta["model_config"])
    model = build_model(cfg)
    first = next(iter(state.values()))
    model = model.to(dtype or first.dtype)
    model.load_state_dict(state)
    model.eval()
    return model, meta


@torch.no_grad()
def predict_clip(model, images, events, offsets, batch_size=16):
    """Masks (T, H, W) for every frame of a clip, each with clamped reference frames."""
    model.eval()
    dtype = next(model.parameters()).dtype
    T = len(images)
    windows = [reference_indices(t, offsets) for t in range(T)]
    out = []
    for s in range(0, T, batch_size):
        idx = windows[s:s + batch_size]
        im = _to_tensor(np.stack([images[i] for i in idx]), dtype).permute(0, 1, 4, 2, 3)
        ev = _to_tensor(np.stack([events[i] for i in idx]), dtype).permute(0, 1, 4, 2, 3)
        logits = model(im, ev if model.config.uses_events else None)
        out.append(predict_mask(logits, axis=1))
    return np.concatenate(out).astype(np.uint8)


def evaluate_model(model, dataset, offsets, split="val", windows=(8, 16), denominator="gt"):
    idx = dataset.indices(split) or list(range(len(dataset.masks)))
    preds = [predict_clip(model, dataset.images[i], dataset.events[i], offsets) for i in idx]
    gts = [dataset.masks[i] for i in idx]
    report = evaluate_clips(preds, gts, model.config.num_classes, windows, denominator,
                            model_config=model.config)
    return report, preds
