"""Compare fusion arrangements (and the image-only baseline) under one training budget."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._validation import ConfigError
from .config import ABLATION_ARMS
from .fusion import ARRANGEMENT_ALIASES
from .metrics import count_params_flops
from .training import evaluate_model, train

logger = logging.getLogger(__name__)

ARM_LABELS = {
    "no_fusion": "No fusion (image only)",
    "channel": "Channel",
    "spatial": "Spatial",
    "spatial_then_channel": "Spatial + Channel",
    "parallel": "Channel & Spatial in parallel",
    "channel_then_spatial": "Channel + Spatial",
}


def check_arms(arms):
    arms = list(arms)
    bad = [a for a in arms if a not in ABLATION_ARMS]
    if bad:
        raise ConfigError(f"unknown ablation arm(s) {bad}; choose from {ABLATION_ARMS}")
    if not arms:
        raise ConfigError("no ablation arms given")
    return arms


@dataclass
class ArmResult:
    arm: str
    seed: int
    miou: float
    wiou: float
    mvc8: float
    mvc16: float
    final_loss: float
    param_count: int
    flop_estimate: int
    seconds: float


@dataclass
class AblationReport:
    rows: list = field(default_factory=list)
    budget: dict = field(default_factory=dict)

    def summary(self):
        """Per-arm means over seeds, in arm order of first appearance."""
        out = {}
        for r in self.rows:
            out.setdefault(r.arm, []).append(r)
        return {
            arm: {m: float(np.mean([getattr(r, m) for r in rs]))
                  for m in ("miou", "wiou", "mvc8", "mvc16", "final_loss")}
            | {"param_count": rs[0].param_count, "flop_estimate": rs[0].flop_estimate,
               "seeds": [r.seed for r in rs]}
            for arm, rs in out.items()
        }

    def wins(self, arm, baseline, metrics=("miou", "mvc8")):
        """Seeds where ``arm`` beats ``baseline`` strictly on every metric in ``metrics``."""
        by = {(r.arm, r.seed): r for r in self.rows}
        seeds = sorted({r.seed for r in self.rows if r.arm == arm})
        return [s for s in seeds if (baseline, s) in by and all(
            getattr(by[(arm, s)], m) > getattr(by[(baseline, s)], m) for m in metrics)]

    def to_dict(self):
        return {"rows": [asdict(r) for r in self.rows], "summary": self.summary(),
                "budget": self.budget}

    def table(self):
        lines = ["| arm | mIoU | mVC8 | mVC16 | params | GFLOPs |", "|---|---|---|---|---|---|"]
        for arm, s in self.summary().items():
            lines.append(f"| {ARM_LABELS.get(arm, arm)} | {100 * s['miou']:.1f} | "
                         f"{100 * s['mvc8']:.1f} | {100 * s['mvc16']:.1f} | {s['param_count']} | "
                         f"{s['flop_estimate'] / 1e9:.4f} |")
        return "\n".join(lines)

    @classmethod
    def from_dict(cls, d):
        return cls([ArmResult(**r) for r in d["rows"]], d.get("budget", {}))

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        (out / "ablation.md").write_text(self.table() + "\n")
        plot_ablation(self, out / "ablation.png")
        return out


def plot_ablation(report, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    summary = report.summary()
    arms = list(summary)
    metrics = ("miou", "mvc8", "mvc16")
    x = np.arange(len(arms))
    fig, ax = plt.subplots(figsize=(1.6 * len(arms) + 2, 3.5))
    for i, m in enumerate(metrics):
        ax.bar(x + (i - 1) * 0.27, [summary[a][m] for a in arms], 0.27, label=m)
    ax.set_xticks(x, [ARM_LABELS.get(a, a) for a in arms], rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def arm_model_config(base, arm):
    return base.__class__.from_dict(base.to_dict() | {"arrangement": ARRANGEMENT_ALIASES.get(arm, arm)})


def ablate(arms, dataset, model_cfg, train_cfg, seeds=(0,), out_dir=None):
    """Train every arm with every seed on the same data and budget; evaluate on ``val``."""
    arms = check_arms(arms)
    report = AblationReport(budget={"total_iters": train_cfg.total_iters, "lr": train_cfg.lr,
                                    "batch_size": train_cfg.batch_size, "seeds": list(seeds),
                                    "num_clips": len(dataset.masks)})
    for seed in seeds:
        for arm in arms:
            mcfg = arm_model_config(model_cfg, arm)
            tcfg = train_cfg.__class__.from_dict(train_cfg.to_dict() | {"seed": int(seed)})
            start = time.time()
            run_dir = Path(out_dir) / f"{arm}_seed{seed}" if out_dir is not None else None
            result = train(tcfg, mcfg, dataset, run_dir)
            metrics, _ = evaluate_model(result.model, dataset, tcfg.offsets)
            params, flops = count_params_flops(mcfg)
            row = ArmResult(arm, int(seed), metrics.miou, metrics.wiou, metrics.mvc8, metrics.mvc16,
                            float(np.mean(result.losses[-50:])) if result.losses else math.nan,
                            params, flops, time.time() - start)
            logger.info("arm %s seed %d: mIoU %.4f mVC8 %.4f", arm, seed, row.miou, row.mvc8)
            report.rows.append(row)
    if out_dir is not None:
        report.save(out_dir)
    return report
