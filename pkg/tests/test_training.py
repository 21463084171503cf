import csv

import numpy as np
import pytest
import torch

from evsnet import ConfigError, NumericError
from evsnet.model import ModelConfig, build_model
from evsnet.training import TrainConfig, evaluate_model, poly_lr, predict_clip, train
from conftest import TINY_MODEL


def _cfg(**kw):
    base = dict(total_iters=4, batch_size=2, lr=1e-3, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_poly_schedule():
    assert poly_lr(1.0, 0, 10) == 1.0
    assert poly_lr(1.0, 5, 10) == 0.5
    assert poly_lr(1.0, 10, 10) == 0.0
    assert abs(poly_lr(2.0, 3, 4, power=2.0) - 2.0 / 16) < 1e-15


@pytest.mark.parametrize("kw", [{"offsets": (3, 6)}, {"offsets": (6, 3, 9)}, {"dtype": "float16"},
                                {"crop_size": (48, 48)}, {"batch_size": 0}])
def test_bad_train_config(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_zero_lr_leaves_weights(tiny_data, tiny_model_cfg):
    res = train(_cfg(lr=0.0, total_iters=2), tiny_model_cfg, tiny_data)
    fresh = build_model(tiny_model_cfg, 0)
    for (k, a), (_, b) in zip(res.model.state_dict().items(), fresh.state_dict().items()):
        assert torch.equal(a, b), k


def test_float64_runs_are_identical(tiny_data, tiny_model_cfg, tmp_path):
    a = train(_cfg(dtype="float64"), tiny_model_cfg, tiny_data, tmp_path / "a")
    b = train(_cfg(dtype="float64"), tiny_model_cfg, tiny_data, tmp_path / "b")
    assert np.max(np.abs(np.subtract(a.losses, b.losses))) <= 1e-10
    assert (tmp_path / "a" / "checkpoint" / "weights.bin").read_bytes() == \
        (tmp_path / "b" / "checkpoint" / "weights.bin").read_bytes()
    with open(tmp_path / "a" / "train_log.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4 and float(rows[0]["loss"]) == a.losses[0]


def test_loss_decreases(tiny_data, tiny_model_cfg):
    res = train(_cfg(total_iters=60, lr=3e-3, photometric=False, gamma_distortion=False),
                tiny_model_cfg, tiny_data)
    assert np.mean(res.losses[-10:]) < np.mean(res.losses[:10])


def test_nan_loss_aborts_with_dump(tiny_data, tiny_model_cfg, tmp_path):
    bad = tiny_data.subset("train")
    bad.images = bad.images.copy()
    bad.images[:] = np.nan
    with pytest.raises(NumericError, match="iteration 0"):
        train(_cfg(), tiny_model_cfg, bad, tmp_path)
    assert (tmp_path / "nan_batch.npz").exists()


def test_reference_count_mismatch(tiny_data):
    with pytest.raises(ConfigError):
        train(_cfg(), ModelConfig(**{**TINY_MODEL, "num_refs": 2}), tiny_data)


def test_predict_and_evaluate(tiny_data, tiny_model_cfg):
    model = build_model(tiny_model_cfg, 0)
    preds = predict_clip(model, tiny_data.images[0], tiny_data.events[0], (3, 6, 9))
    assert preds.shape == (12, 32, 32) and preds.max() < 5
    report, _ = evaluate_model(model, tiny_data, (3, 6, 9))
    assert 0 <= report.miou <= 1 and 0 <= report.mvc8 <= 1
    assert report.param_count == sum(p.numel() for p in model.parameters())


def test_no_fusion_model_ignores_events(tiny_model_cfg):
    cfg = ModelConfig(**{**TINY_MODEL, "arrangement": "no_fusion"})
    model = build_model(cfg, 0).eval()
    x = torch.rand(1, 4, 3, 32, 32)
    assert torch.equal(model(x, torch.rand(1, 4, 1, 32, 32)), model(x, None))
    assert not hasattr(model, "mem") or model.mem is None
