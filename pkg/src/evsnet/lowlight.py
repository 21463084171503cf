"""Low-light frame synthesis by linear scaling followed by a gamma curve.

A normal-light frame ``x`` in [0, 1] becomes ``beta * (alpha * x) ** gamma``.
One parameter triple is drawn per clip so a clip darkens coherently over time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_clips, check_unit_range

ALPHA_RANGE = (0.9, 1.0)
BETA_RANGE = (0.5, 1.0)
GAMMA_RANGE = (2.0, 3.5)


@dataclass(frozen=True)
class LowLightParams:
    alpha: float
    beta: float
    gamma: float
    seed: int | None = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["alpha"]), float(d["beta"]), float(d["gamma"]), d.get("seed"))

    def in_sampling_range(self):
        return (
            ALPHA_RANGE[0] <= self.alpha <= ALPHA_RANGE[1]
            and BETA_RANGE[0] <= self.beta <= BETA_RANGE[1]
            and GAMMA_RANGE[0] <= self.gamma <= GAMMA_RANGE[1]
        )


def sample_params(seed):
    """Draw ``(alpha, beta, gamma)`` uniformly from their ranges, deterministically in ``seed``."""
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(*ALPHA_RANGE)
    beta = rng.uniform(*BETA_RANGE)
    gamma = rng.uniform(*GAMMA_RANGE)
    return LowLightParams(float(alpha), float(beta), float(gamma), int(seed))


def degrade(frame, params):
    """Apply ``beta * (alpha * x) ** gamma`` elementwise.

    ``frame`` may have any shape (a single frame or a whole clip) but must already be
    normalized to [0, 1]; 8-bit data is rejected so that a missing ``/255`` is caught.
    """
    x = check_unit_range(frame)
    out = params.beta * np.power(params.alpha * x, params.gamma)
    return np.clip(out, 0.0, 1.0)


def to_uint8(x):
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(x):
    return np.asarray(x, dtype=np.float64) / 255.0


class LowLightDegrader(TransformerMixin, BaseEstimator):
    """Darken clips of shape (N, T, H, W, 3).

    Clip ``i`` uses ``sample_params(seed + i)`` unless ``alpha``, ``beta`` and
    ``gamma`` are all given, in which case every clip shares them.
    """

    def __init__(self, seed=0, alpha=None, beta=None, gamma=None):
        self.seed = seed
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma

    def fit(self, X, y=None):
        check_clips(X, channels=3)
        return self

    def params_for_clip(self, i):
        if None not in (self.alpha, self.beta, self.gamma):
            return LowLightParams(self.alpha, self.beta, self.gamma, None)
        return sample_params(self.seed + i)

    def transform(self, X):
        X = check_clips(X, channels=3)
        self.params_ = [self.params_for_clip(i) for i in range(len(X))]
        return np.stack([degrade(clip, p) for clip, p in zip(X, self.params_)])
