"""Segmentation metrics: confusion-matrix IoU, weighted IoU, video consistency, and
parameter / FLOP counting.

Video consistency over a window of ``t`` frames compares the pixels whose label stays
the same through all ``t`` ground-truth frames with those whose predicted label stays
the same through all ``t`` predicted frames. A pixel counts towards the numerator when
it is consistent in both and the two consistent labels agree.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from ._validation import ConfigError, ShapeError, check_same_shape

logger = logging.getLogger(__name__)

IGNORE_INDEX = 255
VC_DENOMINATORS = ("gt", "pred")
FLOP_CONVENTION = "FLOPs = 2 x multiply-accumulates of conv, linear and attention products"


def new_confusion(num_classes):
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def confusion_accumulate(pred, gt, state, ignore_index=IGNORE_INDEX):
    """Add ``state[g, p] += 1`` for every non-ignored pixel; returns the updated state."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    check_same_shape(pred, gt)
    k = state.shape[0]
    keep = gt != ignore_index
    g = gt[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    if g.size and (g.min() < 0 or g.max() >= k or p.min() < 0 or p.max() >= k):
        raise ValueError(f"labels outside [0, {k})")
    state += np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return state


def confusion_matrix(preds, gts, num_classes, ignore_index=IGNORE_INDEX):
    state = new_confusion(num_classes)
    for p, g in zip(preds, gts):
        confusion_accumulate(p, g, state, ignore_index)
    return state


def iou_from_confusion(state):
    """Per-class IoU, mIoU and pixel-share-weighted IoU.

    Classes with an empty union get NaN IoU and are left out of the mean; if no class
    is valid the mean is NaN as well.
    """
    state = np.asarray(state, dtype=np.float64)
    tp = np.diag(state)
    gt_total = state.sum(axis=1)
    union = gt_total + state.sum(axis=0) - tp
    valid = union > 0
    iou = np.full(len(tp), np.nan)
    iou[valid] = tp[valid] / union[valid]
    if not valid.any():
        return iou, float("nan"), float("nan")
    miou = float(iou[valid].mean())
    share = gt_total / gt_total.sum() if gt_total.sum() else np.zeros_like(gt_total)
    wiou = float(np.sum(share[valid] * iou[valid]))
    return iou, miou, wiou


def _consistent(masks, ignore_index):
    masks = np.asarray(masks)
    same = np.all(masks == masks[0], axis=0)
    if ignore_index is not None:
        same &= masks[0] != ignore_index
    return same


def video_consistency(gts, preds, denominator="gt", ignore_index=IGNORE_INDEX):
    """VC over one window of ``t`` frames; 1.0 when the denominator set is empty."""
    if denominator not in VC_DENOMINATORS:
        raise ConfigError(f"vc.denominator must be one of {VC_DENOMINATORS}, got {denominator!r}")
    gts = np.asarray(gts)
    preds = np.asarray(preds)
    if len(gts) != len(preds) or len(gts) == 0:
        raise ShapeError(f"need equal, non-zero frame counts (gt {len(gts)}, pred {len(preds)})")
    check_same_shape(preds, gts)
    gt_c = _consistent(gts, ignore_index)
    pred_c = _consistent(preds, None)
    num = np.count_nonzero(gt_c & pred_c & (gts[0] == preds[0]))
    den = np.count_nonzero(gt_c if denominator == "gt" else pred_c)
    return 1.0 if den == 0 else num / den


def vc_windows(gt_clips, pred_clips, window, denominator="gt", ignore_index=IGNORE_INDEX):
    """VC of every stride-1 window in every clip, plus the number of clips too short."""
    values, skipped = [], 0
    for gt, pred in zip(gt_clips, pred_clips, strict=True):
        gt, pred = np.asarray(gt), np.asarray(pred)
        check_same_shape(pred, gt)
        if len(gt) < window:
            skipped += 1
            continue
        for s in range(len(gt) - window + 1):
            values.append(video_consistency(gt[s:s + window], pred[s:s + window], denominator,
                                            ignore_index))
    return values, skipped


def mvc(gt_clips, pred_clips, window, denominator="gt", ignore_index=IGNORE_INDEX):
    """Mean VC over all stride-1 windows of all clips (NaN when no clip is long enough)."""
    values, skipped = vc_windows(gt_clips, pred_clips, window, denominator, ignore_index)
    if skipped:
        logger.warning("mVC%d: skipped %d clip(s) shorter than the window", window, skipped)
    return float(np.mean(values)) if values else float("nan")


# -- parameter and FLOP counting ---------------------------------------------------------

def count_params(module):
    return int(sum(p.numel() for p in module.parameters()))


def _conv_macs(m, out):
    k = math.prod(m.kernel_size)
    return out.numel() * (m.in_channels // m.groups) * k


def count_macs(module, *inputs):
    """Multiply-accumulates of one forward pass, counted analytically from layer shapes."""
    total = 0
    extra = []

    def conv_hook(m, inp, out):
        nonlocal total
        total += _conv_macs(m, out)

    def linear_hook(m, inp, out):
        nonlocal total
        total += out.numel() * m.in_features

    handles = []
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d)):
            handles.append(m.register_forward_hook(conv_hook))
        elif isinstance(m, nn.Linear):
            handles.append(m.register_forward_hook(linear_hook))
        elif hasattr(m, "last_macs"):
            extra.append(m)
    try:
        for m in extra:
            m.last_macs = 0
        with torch.no_grad():
            module(*inputs)
        total += sum(m.last_macs for m in extra)
    finally:
        for h in handles:
            h.remove()
    return int(total)


def count_params_flops(model_config=None, module=None, inputs=None):
    """(parameter count, FLOP estimate) for a model config or an explicit module.

    For a config the network is built and fed one sample of ``config.input_size``.
    An explicit module is run on ``inputs``; without inputs only parameters are counted.
    """
    if module is None:
        from .model import build_model

        module = build_model(model_config)
        cfg = module.config
        H, W = cfg.input_size
        inputs = (torch.zeros(1, cfg.num_frames, 3, H, W), torch.full((1, cfg.num_frames, 1, H, W), 0.5))
    params = count_params(module)
    if inputs is None:
        return params, 0
    return params, 2 * count_macs(module, *inputs)


@dataclass
class MetricsReport:
    per_class_iou: list
    miou: float
    wiou: float
    mvc8: float
    mvc16: float
    param_count: int = 0
    flop_estimate: int = 0
    vc_denominator: str = "gt"
    flop_convention: str = FLOP_CONVENTION
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        def clean(v):
            if isinstance(v, float) and math.isnan(v):
                return None
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v

        return {k: clean(v) for k, v in asdict(self).items()}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text

    def table(self):
        def fmt(v):
            return "no-data" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}"

        lines = [f"# {self.flop_convention}",
                 "| metric | value |", "|---|---|",
                 f"| mIoU | {fmt(self.miou)} |", f"| WIoU | {fmt(self.wiou)} |",
                 f"| mVC8 | {fmt(self.mvc8)} |", f"| mVC16 | {fmt(self.mvc16)} |",
                 f"| params | {self.param_count} |",
                 f"| GFLOPs | {self.flop_estimate / 1e9:.4f} |"]
        for k, v in enumerate(self.per_class_iou):
            lines.append(f"| IoU class {k} | {fmt(v)} |")
        return "\n".join(lines)


def evaluate_clips(pred_clips, gt_clips, num_classes, windows=(8, 16), denominator="gt",
                   ignore_index=IGNORE_INDEX, model_config=None):
    """Full report over clips of (T, H, W) masks."""
    state = new_confusion(num_classes)
    for p, g in zip(pred_clips, gt_clips, strict=True):
        for pf, gf in zip(p, g, strict=True):
            confusion_accumulate(pf, gf, state, ignore_index)
    per_class, miou, wiou = iou_from_confusion(state)
    vcs = {w: mvc(gt_clips, pred_clips, w, denominator, ignore_index) for w in windows}
    params, flops = count_params_flops(model_config)
    return MetricsReport(
        per_class_iou=[float(v) for v in per_class], miou=miou, wiou=wiou,
        mvc8=vcs.get(8, float("nan")), mvc16=vcs.get(16, float("nan")),
        param_count=params, flop_estimate=flops, vc_denominator=denominator,
        extra={f"mvc{w}": vcs[w] for w in windows if w not in (8, 16)},
    )
