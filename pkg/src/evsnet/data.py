"""Toy moving-shapes video dataset: generation, storage, loading and sampling.

Each clip shows coloured shapes drifting (and bouncing) over a static textured
background. The class of a pixel is the kind of the topmost moving shape covering it,
with the background as class 0. Static decoy shapes of the same kinds are painted into
the background and stay class 0, so a shape is only an object if it moves; colours are
random. Frames are darkened per clip and turned into event frames.

On-disk layout::

    <root>/manifest.json
    <root>/clip_0000/{normal,lowlight,events,masks}/000.png
    <root>/clip_0000/clip.json
    <root>/clip_0000/lowlight.json      # {alpha, beta, gamma, seed}
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from PIL import Image

from ._validation import ConfigError, check_divisible
from .events import SimConfig, clip_to_event_frames
from .lowlight import degrade, from_uint8, sample_params, to_uint8

SHAPE_KINDS = ("circle", "rectangle", "triangle", "diamond", "ring", "cross")
SUBDIRS = ("normal", "lowlight", "events", "masks")


@dataclass
class ToyDatasetConfig:
    num_clips: int = 8
    frames_per_clip: int = 16
    H: int = 64
    W: int = 64
    num_classes: int = 5
    num_shapes: int = 3
    num_decoys: int = 2  # static shapes painted into the background (class 0)
    motion_speed: tuple = (1.0, 3.0)  # pixels per frame
    shape_size: tuple = (7.0, 14.0)  # half-extent in pixels
    fps: float = 15.0
    val_every: int = 5  # every val_every-th clip goes to the validation split
    seed: int = 0

    def __post_init__(self):
        self.motion_speed = tuple(float(v) for v in self.motion_speed)
        self.shape_size = tuple(float(v) for v in self.shape_size)
        if self.frames_per_clip < 10:
            raise ConfigError("frames_per_clip must be >= 10 to hold the offset-9 reference")
        try:
            check_divisible(self.H, self.W)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not 2 <= self.num_classes <= len(SHAPE_KINDS) + 1:
            raise ConfigError(f"num_classes must be in [2, {len(SHAPE_KINDS) + 1}]")
        lo, hi = self.shape_size
        if not 0 < lo <= hi:
            raise ConfigError(f"bad shape_size range {self.shape_size}")
        if 2 * hi >= min(self.H, self.W):
            raise ConfigError(
                f"shapes up to {2 * hi:g}px across do not fit a {self.H}x{self.W} frame"
            )
        if self.motion_speed[0] < 0 or self.motion_speed[1] < self.motion_speed[0]:
            raise ConfigError(f"bad motion_speed range {self.motion_speed}")
        if self.num_clips < 1 or self.num_shapes < 0 or self.num_decoys < 0:
            raise ConfigError("num_clips must be >= 1, num_shapes and num_decoys >= 0")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["motion_speed"] = list(self.motion_speed)
        d["shape_size"] = list(self.shape_size)
        return d


def shape_mask(kind, cx, cy, r, H, W):
    y, x = np.mgrid[0:H, 0:W] + 0.5
    dx, dy = x - cx, y - cy
    if kind == "circle":
        return dx**2 + dy**2 <= r**2
    if kind == "rectangle":
        return (np.abs(dx) <= r) & (np.abs(dy) <= 0.6 * r)
    if kind == "triangle":
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= 0.5 * (dy + r))
    if kind == "diamond":
        return np.abs(dx) + np.abs(dy) <= r
    if kind == "ring":
        d2 = dx**2 + dy**2
        return (d2 <= r**2) & (d2 >= (0.5 * r) ** 2)
    if kind == "cross":
        w = 0.3 * r
        return ((np.abs(dx) <= w) & (np.abs(dy) <= r)) | ((np.abs(dy) <= w) & (np.abs(dx) <= r))
    raise ValueError(f"unknown shape kind {kind!r}")


def _background(rng, H, W):
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    base = rng.uniform(0.3, 0.7, size=3)
    tex = np.zeros((H, W))
    for _ in range(3):
        fx, fy = rng.uniform(-0.3, 0.3, size=2)
        tex += rng.uniform(0.03, 0.08) * np.sin(fx * x + fy * y + rng.uniform(0, 2 * np.pi))
    tex += rng.uniform(-0.04, 0.04, size=(H, W))
    return np.clip(base[None, None, :] + tex[..., None], 0.0, 1.0)


def generate_clip(cfg, index):
    """Normal-light frames (T, H, W, 3) in [0, 1], masks (T, H, W) and shape metadata."""
    rng = np.random.default_rng([cfg.seed, index])
    T, H, W = cfg.frames_per_clip, cfg.H, cfg.W
    bg = _background(rng, H, W)
    for _ in range(cfg.num_decoys):
        kind = SHAPE_KINDS[int(rng.integers(0, cfg.num_classes - 1))]
        r = float(rng.uniform(*cfg.shape_size))
        cx, cy = rng.uniform(r, W - r), rng.uniform(r, H - r)
        bg[shape_mask(kind, cx, cy, r, H, W)] = rng.uniform(0.05, 1.0, size=3)
    shapes = []
    for _ in range(cfg.num_shapes):
        label = int(rng.integers(1, cfg.num_classes))
        r = float(rng.uniform(*cfg.shape_size))
        speed = float(rng.uniform(*cfg.motion_speed))
        angle = float(rng.uniform(0, 2 * np.pi))
        shapes.append({
            "kind": SHAPE_KINDS[label - 1], "label": label, "radius": r,
            "color": rng.uniform(0.05, 1.0, size=3).tolist(),
            "start": [float(rng.uniform(r, W - r)), float(rng.uniform(r, H - r))],
            "velocity": [speed * np.cos(angle), speed * np.sin(angle)],
        })
    frames = np.empty((T, H, W, 3))
    masks = np.zeros((T, H, W), dtype=np.uint8)
    pos = [list(s["start"]) for s in shapes]
    vel = [list(s["velocity"]) for s in shapes]
    for t in range(T):
        frame = bg.copy()
        for s, p in zip(shapes, pos):
            m = shape_mask(s["kind"], p[0], p[1], s["radius"], H, W)
            frame[m] = s["color"]
            masks[t][m] = s["label"]
        frames[t] = frame
        for s, p, v in zip(shapes, pos, vel):
            for ax, lim in ((0, W), (1, H)):
                p[ax] += v[ax]
                r = s["radius"]
                if p[ax] < r or p[ax] > lim - r:
                    v[ax] = -v[ax]
                    p[ax] = float(np.clip(p[ax], r, lim - r))
    return frames, masks, shapes


def lowlight_seed(cfg, index):
    return int(np.random.default_rng([cfg.seed, index, 1]).integers(2**31 - 1))


def render_clip(cfg, index, sim_cfg):
    """All arrays of one clip; events come from the (unquantized) low-light frames."""
    frames, masks, shapes = generate_clip(cfg, index)
    params = sample_params(lowlight_seed(cfg, index))
    low = degrade(frames, params)
    events = clip_to_event_frames(low, sim_cfg)
    return {"normal": frames, "lowlight": low, "events": events, "masks": masks,
            "params": params, "shapes": shapes}


def _write_images(directory, arrays):
    directory.mkdir(parents=True, exist_ok=True)
    for t, a in enumerate(arrays):
        Image.fromarray(a).save(directory / f"{t:03d}.png")


def write_clip(clip_dir, clip, fps):
    clip_dir = Path(clip_dir)
    _write_images(clip_dir / "normal", to_uint8(clip["normal"]))
    _write_images(clip_dir / "lowlight", to_uint8(clip["lowlight"]))
    _write_images(clip_dir / "events", to_uint8(clip["events"][..., 0]))
    _write_images(clip_dir / "masks", clip["masks"])
    meta = {"num_frames": int(len(clip["masks"])), "fps": fps, "shapes": clip["shapes"],
            "lowlight": clip["params"].to_dict()}
    (clip_dir / "clip.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (clip_dir / "lowlight.json").write_text(json.dumps(clip["params"].to_dict(), sort_keys=True) + "\n")


def clip_name(i):
    return f"clip_{i:04d}"


def split_of(cfg, i):
    return "val" if cfg.val_every and i % cfg.val_every == cfg.val_every - 1 else "train"


def make_dataset(cfg, out_dir, sim_cfg=None, n_jobs=1):
    """Write the dataset to ``out_dir``; output is bitwise-reproducible for a fixed seed."""
    sim_cfg = sim_cfg or SimConfig(delta_t=1.0 / cfg.fps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(i):
        write_clip(out / clip_name(i), render_clip(cfg, i, sim_cfg), cfg.fps)

    Parallel(n_jobs=n_jobs)(delayed(one)(i) for i in range(cfg.num_clips))
    manifest = {
        "config": cfg.to_dict(), "sim": asdict(sim_cfg),
        "clips": [{"name": clip_name(i), "split": split_of(cfg, i)} for i in range(cfg.num_clips)],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_frames(directory, gray=False):
    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    return np.stack([np.asarray(Image.open(f).convert("L" if gray else "RGB")) for f in files])


def read_masks(directory):
    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG masks in {directory}")
    return np.stack([np.asarray(Image.open(f)) for f in files])


@dataclass
class ClipDataset:
    """In-memory clips: images (N, T, H, W, 3) and events (N, T, H, W, 1) in [0, 1]."""

    images: np.ndarray
    events: np.ndarray
    masks: np.ndarray
    names: list = field(default_factory=list)
    splits: list = field(default_factory=list)
    num_classes: int | None = None

    def __post_init__(self):
        if not self.names:
            self.names = [clip_name(i) for i in range(len(self.images))]
        if not self.splits:
            self.splits = ["train"] * len(self.images)

    def indices(self, split):
        return [i for i, s in enumerate(self.splits) if s == split]

    def subset(self, split):
        idx = self.indices(split)
        return ClipDataset(self.images[idx], self.events[idx], self.masks[idx],
                           [self.names[i] for i in idx], [split] * len(idx), self.num_classes)


def load_dataset(root, dtype=np.float32):
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    images, events, masks = [], [], []
    for c in manifest["clips"]:
        d = root / c["name"]
        images.append(from_uint8(read_frames(d / "lowlight")).astype(dtype))
        events.append(from_uint8(read_frames(d / "events", gray=True))[..., None].astype(dtype))
        masks.append(read_masks(d / "masks"))
    return ClipDataset(np.stack(images), np.stack(events), np.stack(masks),
                       [c["name"] for c in manifest["clips"]], [c["split"] for c in manifest["clips"]],
                       manifest["config"]["num_classes"])


def reference_indices(t, offsets):
    """Current frame first, then ``t - k`` for each offset, clamped at the clip start."""
    return [t] + [max(t - k, 0) for k in offsets]


@dataclass
class AugmentConfig:
    crop_size: tuple | None = None
    flip: bool = True
    photometric: bool = True
    gamma_distortion: bool = True


def augment(images, events, mask, rng, cfg):
    """Apply one random geometric transform to images, events and mask alike.

    Photometric and gamma distortion touch the images only: events record the scene
    before any such distortion.
    """
    H, W = mask.shape
    if cfg.crop_size is not None and tuple(cfg.crop_size) != (H, W):
        ch, cw = cfg.crop_size
        y0 = int(rng.integers(0, H - ch + 1))
        x0 = int(rng.integers(0, W - cw + 1))
        images = images[:, y0:y0 + ch, x0:x0 + cw]
        events = events[:, y0:y0 + ch, x0:x0 + cw]
        mask = mask[y0:y0 + ch, x0:x0 + cw]
    if cfg.flip and rng.random() < 0.5:
        images, events, mask = images[:, :, ::-1], events[:, :, ::-1], mask[:, ::-1]
    if cfg.photometric:
        gain = rng.uniform(0.75, 1.25)
        contrast = rng.uniform(0.75, 1.25)
        mean = images.mean()
        images = np.clip((images - mean) * contrast + mean * gain, 0.0, 1.0)
    if cfg.gamma_distortion:
        images = np.power(images, rng.uniform(0.8, 1.25))
    return np.ascontiguousarray(images), np.ascontiguousarray(events), np.ascontiguousarray(mask)


def sample_window(data, clip, t, offsets):
    idx = reference_indices(t, offsets)
    return data.images[clip, idx], data.events[clip, idx], data.masks[clip, t]

