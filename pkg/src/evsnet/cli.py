"""Command line entry point: ``evsnet <subcommand>``."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click
import numpy as np

from . import data as data_mod
from .ablation import AblationReport, ablate, check_arms
from .config import dump_config, load_config
from .events import SimConfig, clip_to_event_frames, write_events_csv
from .lowlight import degrade, from_uint8, sample_params, to_uint8
from .metrics import count_params_flops, evaluate_clips


def _write_pngs(directory, arrays):
    data_mod._write_images(Path(directory), arrays)


def _input_frames(clip_dir, *subdirs):
    clip_dir = Path(clip_dir)
    for sub in subdirs:
        if (clip_dir / sub).is_dir():
            return data_mod.read_frames(clip_dir / sub)
    return data_mod.read_frames(clip_dir)


config_option = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                             help="YAML config file (layered over the defaults).")
set_option = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                          help="Override a config value, e.g. --set train.lr=1e-3.")


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Event-guided low-light video segmentation toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
def synth(in_dir, out_dir, seed):
    """Darken a clip's frames; writes OUT/lowlight/*.png and OUT/lowlight.json."""
    frames = from_uint8(_input_frames(in_dir, "normal", "frames"))
    params = sample_params(seed)
    out = Path(out_dir)
    _write_pngs(out / "lowlight", to_uint8(degrade(frames, params)))
    (out / "lowlight.json").write_text(json.dumps(params.to_dict(), sort_keys=True) + "\n")
    click.echo(json.dumps(params.to_dict()))


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--threshold", default=0.2, show_default=True, type=float)
@click.option("--fps", default=15.0, show_default=True, type=float)
@click.option("--max-events", default=4, show_default=True, type=int)
@click.option("--csv/--no-csv", "write_csv", default=False, help="Also write raw x,y,p,t streams.")
def events(in_dir, out_dir, threshold, fps, max_events, write_csv):
    """Simulate events from a clip; writes OUT/events/*.png (and events.csv)."""
    frames = from_uint8(_input_frames(in_dir, "lowlight", "normal", "frames"))
    cfg = SimConfig(contrast_threshold=threshold, delta_t=1.0 / fps, max_events_per_pixel=max_events)
    ev_frames, streams = clip_to_event_frames(frames, cfg, return_events=True)
    out = Path(out_dir)
    _write_pngs(out / "events", to_uint8(ev_frames[..., 0]))
    if write_csv:
        write_events_csv(out / "events.csv", np.concatenate(streams))
    click.echo(f"{sum(len(s) for s in streams)} events over {len(frames)} frames")


@main.command("make-dataset")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--num-clips", type=int, help="Shortcut for --set dataset.num_clips=N.")
@click.option("--seed", type=int, help="Shortcut for --set dataset.seed=N.")
@click.option("--jobs", default=1, show_default=True)
@config_option
@set_option
def make_dataset(out_dir, num_clips, seed, jobs, config_path, overrides):
    """Generate the toy moving-shapes dataset."""
    overrides = list(overrides)
    if num_clips is not None:
        overrides.append(f"dataset.num_clips={num_clips}")
    if seed is not None:
        overrides.append(f"dataset.seed={seed}")
    cfg = load_config(config_path, overrides)
    data_mod.make_dataset(cfg.dataset(), out_dir, cfg.sim(), n_jobs=jobs)
    click.echo(f"wrote {cfg['dataset']['num_clips']} clips to {out_dir}")


@main.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@config_option
@set_option
def train(dataset_dir, out_dir, config_path, overrides):
    """Train a model; writes train_log.csv, checkpoint/, metrics.json and report.md."""
    from .training import evaluate_model, train as run_train

    cfg = load_config(config_path, overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    dataset = data_mod.load_dataset(dataset_dir)
    model_cfg = cfg.model(num_classes=dataset.num_classes)
    train_cfg = cfg.train()
    result = run_train(train_cfg, model_cfg, dataset, out)
    report, _ = evaluate_model(result.model, dataset, train_cfg.offsets,
                               windows=tuple(cfg["eval"]["windows"]),
                               denominator=cfg["vc"]["denominator"])
    report.to_json(out / "metrics.json")
    _write_report(out)
    click.echo(report.table())


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--split", default="val", show_default=True)
def predict(checkpoint, dataset_dir, out_dir, split):
    """Write predicted masks as OUT/<clip>/masks/*.png."""
    from .training import load_model, predict_clip

    model, meta = load_model(checkpoint)
    offsets = tuple(meta.get("train_config", {}).get("offsets", (3, 6, 9)))
    dataset = data_mod.load_dataset(dataset_dir)
    for i in dataset.indices(split) or range(len(dataset.masks)):
        pred = predict_clip(model, dataset.images[i], dataset.events[i], offsets)
        _write_pngs(Path(out_dir) / dataset.names[i] / "masks", pred)
    click.echo(f"predictions written to {out_dir}")


def _mask_clips(root, names=None):
    root = Path(root)
    if names is None:
        names = sorted(p.name for p in root.iterdir() if p.is_dir())
    clips = []
    for n in names:
        d = root / n
        clips.append(data_mod.read_masks(d / "masks" if (d / "masks").is_dir() else d))
    return names, clips


@main.command("eval")
@click.option("--pred-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--gt-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--window", "windows", default="8,16", show_default=True)
@click.option("--num-classes", type=int, help="Defaults to the config's dataset.num_classes.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Write the JSON report here.")
@config_option
@set_option
def eval_cmd(pred_dir, gt_dir, windows, num_classes, out_path, config_path, overrides):
    """Score predicted mask clips against ground-truth clips (matched by clip name)."""
    cfg = load_config(config_path, overrides)
    names, preds = _mask_clips(pred_dir)
    _, gts = _mask_clips(gt_dir, names)
    k = num_classes or cfg["dataset"]["num_classes"]
    report = evaluate_clips(preds, gts, k, tuple(int(w) for w in windows.split(",")),
                            cfg["vc"]["denominator"], model_config=cfg.model(num_classes=k))
    if out_path:
        report.to_json(out_path)
    click.echo(report.table())


@main.command("ablate")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--arms", help="Comma-separated arms (default: ablation.arms from the config).")
@click.option("--seeds", help="Comma-separated seeds (default: ablation.seeds).")
@click.option("--iters", type=int, help="Iterations per arm (default: ablation.total_iters).")
@config_option
@set_option
def ablate_cmd(dataset_dir, out_dir, arms, seeds, iters, config_path, overrides):
    """Train and score each fusion arrangement with identical data, seed and budget."""
    cfg = load_config(config_path, overrides)
    ab = cfg["ablation"]
    arms = check_arms(arms.split(",") if arms else ab["arms"])
    seeds = [int(s) for s in seeds.split(",")] if seeds else ab["seeds"]
    dataset = data_mod.load_dataset(dataset_dir)
    train_cfg = cfg.train(total_iters=iters or ab["total_iters"], lr=ab["lr"])
    report = ablate(arms, dataset, cfg.model(num_classes=dataset.num_classes), train_cfg, seeds, out_dir)
    dump_config(cfg, Path(out_dir) / "config.yaml")
    _write_report(Path(out_dir))
    click.echo(report.table())


def _write_report(run_dir):
    """Render report.md (+ loss_curve.png) for a train or ablation run directory."""
    run_dir = Path(run_dir)
    cfg_file = run_dir / "config.yaml"
    cfg = load_config(cfg_file if cfg_file.exists() else None)
    lines = [f"# Report: {run_dir.name}", ""]
    params, flops = count_params_flops(cfg.model())
    lines += [f"Model (arrangement {cfg['mfm']['arrangement']}): {params} parameters, "
              f"{flops / 1e9:.4f} GFLOPs per window at {cfg.model().input_size} "
              "(2 x multiply-accumulates).", ""]
    if (run_dir / "metrics.json").exists():
        m = json.loads((run_dir / "metrics.json").read_text())
        lines += ["| metric | value |", "|---|---|"]
        lines += [f"| {k} | {m[k]} |" for k in ("miou", "wiou", "mvc8", "mvc16", "param_count",
                                                "flop_estimate")]
        lines.append("")
    if (run_dir / "ablation.json").exists():
        rep = AblationReport.from_dict(json.loads((run_dir / "ablation.json").read_text()))
        lines += [rep.table(), "", "![ablation](ablation.png)", ""]
    log = run_dir / "train_log.csv"
    if log.exists():
        _plot_loss(log, run_dir / "loss_curve.png")
        lines += ["![loss](loss_curve.png)", ""]
    text = "\n".join(lines)
    (run_dir / "report.md").write_text(text)
    return text


def _plot_loss(log_path, out_path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = np.loadtxt(log_path, delimiter=",", skiprows=1, ndmin=2)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(rows[:, 0], rows[:, 2])
    ax.set_xlabel("iteration")
    ax.set_ylabel("cross-entropy")
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)


@main.command()
@click.option("--run-dir", required=True, type=click.Path(exists=True, file_okay=False))
def report(run_dir):
    """Render report.md for a train or ablate output directory."""
    click.echo(_write_report(run_dir))


if __name__ == "__main__":
    main()
