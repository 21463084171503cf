"""Input validation helpers and the package's exception types."""

from __future__ import annotations

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration value or unknown config key."""


class ShapeError(ValueError):
    """Tensor or array with an incompatible shape."""


class EventDataError(ValueError):
    """Malformed event stream (e.g. an event outside the sensor bounds)."""


class NumericError(FloatingPointError):
    """Non-finite values where finite ones are required."""


def check_unit_range(x, name="frame"):
    """Return ``x`` as a float64 array after checking all values lie in [0, 1]."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(
            f"{name} values must lie in [0, 1] (got range "
            f"[{np.nanmin(arr):.4g}, {np.nanmax(arr):.4g}]); normalize 8-bit images by /255"
        )
    return arr


def check_frame(frame, name="frame"):
    arr = check_unit_range(frame, name)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    return arr


def check_divisible(h, w, factor=32):
    if h % factor or w % factor:
        raise ShapeError(f"spatial size ({h}, {w}) must be divisible by {factor}")


def check_clips(X, channels=None):
    """Validate a clip batch of shape (N, T, H, W, C)."""
    arr = np.asarray(X)
    if arr.ndim != 5:
        raise ShapeError(f"expected clips of shape (N, T, H, W, C), got {arr.shape}")
    if channels is not None and arr.shape[-1] not in np.atleast_1d(channels):
        raise ShapeError(f"expected {channels} channels, got {arr.shape[-1]}")
    return arr


def check_masks(y, like=None):
    """Validate integer label masks, optionally against the (N, T, H, W) prefix of ``like``."""
    arr = np.asarray(y)
    if not np.issubdtype(arr.dtype, np.integer):
        if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("masks must hold integer class indices")
        arr = arr.astype(np.int64)
    if like is not None and arr.shape != tuple(like.shape[:-1]):
        raise ShapeError(f"masks shape {arr.shape} does not match inputs {like.shape[:-1]}")
    return arr


def check_same_shape(a, b, names=("pred", "gt")):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{names[0]} shape {np.shape(a)} != {names[1]} shape {np.shape(b)}")
