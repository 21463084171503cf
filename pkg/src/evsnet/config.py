"""Layered run configuration: built-in defaults < YAML file < ``key.path=value`` overrides.

Schema (top-level sections and what they feed)::

    dataset:   ToyDatasetConfig fields
    sim:       SimConfig fields (event simulation)
    lowlight:  {seed}
    model:     ModelConfig fields other than the mem/mfm ones below
    mem:       {pool_mode: temporal|global_broadcast, compression}
    mfm:       {arrangement, residual, qk_norm, softmax_axis}
    train:     TrainConfig fields
    vc:        {denominator: gt|pred}
    eval:      {windows: [8, 16]}
    ablation:  {arms, seeds, total_iters, lr}
"""

from __future__ import annotations

import copy
import re
from dataclasses import asdict
from pathlib import Path

import yaml

from ._validation import ConfigError
from .data import ToyDatasetConfig
from .events import SimConfig
from .model import ModelConfig
from .training import TrainConfig

MEM_KEYS = ("pool_mode", "compression")
MFM_KEYS = ("arrangement", "residual", "qk_norm", "softmax_axis")
ABLATION_ARMS = ("no_fusion", "channel", "spatial", "spatial_then_channel", "parallel",
                 "channel_then_spatial")


def _model_defaults():
    d = ModelConfig().to_dict()
    return {k: v for k, v in d.items() if k not in MEM_KEYS + MFM_KEYS}


def defaults():
    model = ModelConfig()
    return {
        "dataset": ToyDatasetConfig().to_dict(),
        "sim": asdict(SimConfig()),
        "lowlight": {"seed": 0},
        "model": _model_defaults(),
        "mem": {k: getattr(model, k) for k in MEM_KEYS},
        "mfm": {k: getattr(model, k) for k in MFM_KEYS},
        "train": TrainConfig().to_dict(),
        "vc": {"denominator": "gt"},
        "eval": {"windows": [8, 16]},
        "ablation": {"arms": list(ABLATION_ARMS), "seeds": [0, 1, 2], "total_iters": 2000,
                     "lr": 2e-3},
    }


def _merge(base, update, path=""):
    for k, v in update.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            _merge(base[k], v, where + ".")
        else:
            base[k] = v
    return base


_FLOAT = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


def _numeric(value):
    # YAML 1.1 reads "1e-3" (no dot) as a string
    if isinstance(value, str) and _FLOAT.fullmatch(value.strip()):
        return float(value)
    if isinstance(value, list):
        return [_numeric(v) for v in value]
    if isinstance(value, dict):
        return {k: _numeric(v) for k, v in value.items()}
    return value


def parse_override(text):
    """``"train.lr=1e-3"`` -> ``{"train": {"lr": 0.001}}`` (value parsed as YAML)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    value = _numeric(yaml.safe_load(raw))
    out = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


class Config(dict):
    def dataset(self):
        return ToyDatasetConfig.from_dict(self["dataset"])

    def sim(self):
        d = dict(self["sim"])
        if "delta_t" not in d or d["delta_t"] is None:
            d["delta_t"] = 1.0 / self["dataset"]["fps"]
        return SimConfig(**d)

    def model(self, **changes):
        d = dict(self["model"])
        d.update(self["mem"])
        d.update(self["mfm"])
        d["num_classes"] = self["dataset"]["num_classes"]
        d["num_refs"] = self["train"]["num_refs"]
        d["input_size"] = list(self["train"]["crop_size"] or (self["dataset"]["H"], self["dataset"]["W"]))
        d.update(changes)
        return ModelConfig.from_dict(d)

    def train(self, **changes):
        d = dict(self["train"])
        d.update(changes)
        return TrainConfig.from_dict(d)


def load_config(path=None, overrides=()):
    cfg = defaults()
    if path is not None:
        data = _numeric(yaml.safe_load(Path(path).read_text()) or {})
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping")
        _merge(cfg, data)
    for o in overrides:
        _merge(cfg, parse_override(o))
    return Config(copy.deepcopy(cfg))


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(dict(cfg), sort_keys=True))
