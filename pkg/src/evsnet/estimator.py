"""scikit-learn style front end for the segmentation network.

Inputs are clip batches ``X`` of shape (N, T, H, W, 4): three low-light colour channels
plus the event-frame channel (see :class:`evsnet.events.EventSimulator` with
``append=True``). Targets ``y`` are label masks (N, T, H, W). Every frame of every clip
is predicted, each using its own clamped reference frames.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_clips, check_masks, check_unit_range
from .data import ClipDataset
from .metrics import confusion_matrix, iou_from_confusion
from .model import ModelConfig
from .training import TrainConfig, predict_clip, train


class EVSNetSegmenter(ClassifierMixin, BaseEstimator):
    """Event-guided video segmenter with a fit/predict interface.

    Parameters mirror :class:`ModelConfig` and :class:`TrainConfig`; ``lr`` defaults to
    a toy-scale value rather than the large-scale 6e-5.
    """

    def __init__(self, num_classes=5, arrangement="channel_then_spatial", dim=32,
                 image_widths=(16, 32, 64, 128), event_widths=(8, 16, 32, 64),
                 offsets=(3, 6, 9), pool_mode="temporal", residual=True, qk_norm=True,
                 lr=2e-3, weight_decay=0.01, power=1.0, total_iters=200, batch_size=2,
                 flip=True, photometric=True, gamma_distortion=True, dtype="float32", seed=0):
        self.num_classes = num_classes
        self.arrangement = arrangement
        self.dim = dim
        self.image_widths = image_widths
        self.event_widths = event_widths
        self.offsets = offsets
        self.pool_mode = pool_mode
        self.residual = residual
        self.qk_norm = qk_norm
        self.lr = lr
        self.weight_decay = weight_decay
        self.power = power
        self.total_iters = total_iters
        self.batch_size = batch_size
        self.flip = flip
        self.photometric = photometric
        self.gamma_distortion = gamma_distortion
        self.dtype = dtype
        self.seed = seed

    def _configs(self, H, W):
        offsets = tuple(self.offsets)
        model_cfg = ModelConfig(
            num_classes=self.num_classes, num_refs=len(offsets), dim=self.dim,
            image_widths=self.image_widths, event_widths=self.event_widths,
            arrangement=self.arrangement, pool_mode=self.pool_mode, residual=self.residual,
            qk_norm=self.qk_norm, input_size=(H, W))
        train_cfg = TrainConfig(
            lr=self.lr, weight_decay=self.weight_decay, power=self.power,
            total_iters=self.total_iters, batch_size=self.batch_size, num_refs=len(offsets),
            offsets=offsets, flip=self.flip, photometric=self.photometric,
            gamma_distortion=self.gamma_distortion, dtype=self.dtype, seed=self.seed)
        return model_cfg, train_cfg

    @staticmethod
    def _split(X):
        X = check_clips(X, channels=4)
        check_unit_range(X, "X")
        return X[..., :3].astype(np.float32), X[..., 3:].astype(np.float32)

    def fit(self, X, y):
        images, events = self._split(X)
        y = check_masks(y, like=X)
        model_cfg, train_cfg = self._configs(*images.shape[2:4])
        data = ClipDataset(images, events, y, num_classes=self.num_classes)
        result = train(train_cfg, model_cfg, data)
        self.model_ = result.model
        self.loss_curve_ = result.losses
        self.n_iter_ = len(result.losses)
        self.classes_ = np.arange(self.num_classes)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        images, events = self._split(X)
        return np.stack([predict_clip(self.model_, im, ev, tuple(self.offsets))
                         for im, ev in zip(images, events)])

    def score(self, X, y, sample_weight=None):
        """Mean IoU of the predictions over all frames."""
        pred = self.predict(X)
        y = check_masks(y, like=X)
        _, miou, _ = iou_from_confusion(confusion_matrix(pred.reshape(-1, *pred.shape[2:]),
                                                         y.reshape(-1, *y.shape[2:]),
                                                         self.num_classes))
        return miou
