"""Contrast-threshold event simulation and grey-scale event-frame encoding.

A pixel whose log luminance changes by ``d`` between two frames emits
``floor(|d| / threshold)`` events, all of the sign of ``d``, spread evenly over the
frame interval. This drops the leak, shot-noise and refractory behaviour of full
sensor simulators; what remains is deterministic and easy to check by hand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ConfigError, EventDataError, ShapeError, check_clips

EVENT_DTYPE = np.dtype([("x", np.int32), ("y", np.int32), ("p", np.int8), ("t", np.float64)])


class EventTuple(NamedTuple):
    x: int
    y: int
    p: int
    t: float


@dataclass(frozen=True)
class SimConfig:
    contrast_threshold: float = 0.2
    eps: float = 1e-3
    delta_t: float = 1.0 / 15.0
    max_events_per_pixel: int = 4

    def __post_init__(self):
        if not self.contrast_threshold > 0:
            raise ConfigError(f"contrast_threshold must be > 0, got {self.contrast_threshold}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if not self.delta_t > 0:
            raise ConfigError(f"delta_t must be > 0, got {self.delta_t}")
        if int(self.max_events_per_pixel) < 1:
            raise ConfigError("max_events_per_pixel must be a positive integer")


@dataclass
class EventFrame:
    image: np.ndarray  # (H, W, 1) in [0, 1]
    window_start: float
    window_end: float


def luminance(frame):
    frame = np.asarray(frame, dtype=np.float64)
    return frame.mean(axis=-1) if frame.ndim == 3 else frame


def frames_to_events(prev, curr, t0, t1, cfg):
    """Events emitted between two frames, as a structured array sorted by time.

    Each record has fields ``x``, ``y``, ``p`` (1 = brighter, 0 = darker) and ``t``.
    """
    prev = np.asarray(prev)
    curr = np.asarray(curr)
    if prev.shape != curr.shape:
        raise ShapeError(f"frame shapes differ: {prev.shape} vs {curr.shape}")
    if not t1 > t0:
        raise ConfigError(f"need t1 > t0, got t0={t0}, t1={t1}")
    d = np.log(luminance(curr) + cfg.eps) - np.log(luminance(prev) + cfg.eps)
    counts = np.floor(np.abs(d) / cfg.contrast_threshold).astype(np.int64)
    ys, xs = np.nonzero(counts)
    if ys.size == 0:
        return np.empty(0, dtype=EVENT_DTYPE)
    n = counts[ys, xs]
    pol = (d[ys, xs] > 0).astype(np.int8)

    total = int(n.sum())
    events = np.empty(total, dtype=EVENT_DTYPE)
    events["x"] = np.repeat(xs, n)
    events["y"] = np.repeat(ys, n)
    events["p"] = np.repeat(pol, n)
    # j-th of n events at a pixel fires at t0 + j * (t1 - t0) / n, j = 1..n
    starts = np.cumsum(n) - n
    j = np.arange(total) - np.repeat(starts, n) + 1
    events["t"] = t0 + j * (t1 - t0) / np.repeat(n, n)
    order = np.lexsort((events["x"], events["y"], events["t"]))
    return events[order]


def as_event_array(events):
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return events
    out = np.empty(len(events), dtype=EVENT_DTYPE)
    for i, e in enumerate(events):
        out[i] = tuple(e)
    return out


def events_to_frame(events, H, W, cfg, window=None):
    """Stack events into a one-channel image: ``0.5 + 0.5 * clip(net / max_events, -1, 1)``.

    ``net`` counts positive events as +1 and negative ones as -1, so pixels without net
    activity sit at exactly 0.5.
    """
    ev = as_event_array(events)
    bad = (ev["x"] < 0) | (ev["x"] >= W) | (ev["y"] < 0) | (ev["y"] >= H)
    if bad.any():
        e = ev[np.argmax(bad)]
        raise EventDataError(
            f"event {EventTuple(int(e['x']), int(e['y']), int(e['p']), float(e['t']))} "
            f"outside a {H}x{W} sensor"
        )
    net = np.zeros((H, W), dtype=np.float64)
    np.add.at(net, (ev["y"], ev["x"]), np.where(ev["p"] > 0, 1.0, -1.0))
    image = 0.5 + 0.5 * np.clip(net / cfg.max_events_per_pixel, -1.0, 1.0)
    if window is None:
        window = (float(ev["t"].min()), float(ev["t"].max())) if len(ev) else (0.0, cfg.delta_t)
    return EventFrame(image[..., None], float(window[0]), float(window[1]))


def write_events_csv(path, events):
    ev = as_event_array(events)
    with open(path, "w") as f:
        f.write("x,y,p,t\n")
        for e in ev:
            f.write(f"{int(e['x'])},{int(e['y'])},{int(e['p'])},{float(e['t']):.9f}\n")


def read_events_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = np.empty(len(data), dtype=EVENT_DTYPE)
    if len(data):
        out["x"], out["y"], out["p"], out["t"] = data[:, 0], data[:, 1], data[:, 2], data[:, 3]
    return out


def clip_to_event_frames(frames, cfg, return_events=False):
    """Event frames (T, H, W, 1) for a clip (T, H, W, 3).

    Frame ``t`` stacks the events of the pair ``(t - 1, t)`` so that it lines up with
    image frame ``t``; frame 0 has no predecessor and is the neutral 0.5 image.
    """
    frames = np.asarray(frames, dtype=np.float64)
    T, H, W = frames.shape[:3]
    out = np.empty((T, H, W, 1), dtype=np.float64)
    out[0] = 0.5
    streams = [np.empty(0, dtype=EVENT_DTYPE)]
    for t in range(1, T):
        t0, t1 = (t - 1) * cfg.delta_t, t * cfg.delta_t
        ev = frames_to_events(frames[t - 1], frames[t], t0, t1, cfg)
        out[t] = events_to_frame(ev, H, W, cfg, window=(t0, t1)).image
        streams.append(ev)
    return (out, streams) if return_events else out


class EventSimulator(TransformerMixin, BaseEstimator):
    """Turn clips (N, T, H, W, 3) into event frames.

    With ``append=True`` the event channel is concatenated to the frames, giving
    (N, T, H, W, 4) inputs ready for :class:`evsnet.EVSNetSegmenter`.
    """

    def __init__(self, contrast_threshold=0.2, eps=1e-3, delta_t=1.0 / 15.0,
                 max_events_per_pixel=4, append=True):
        self.contrast_threshold = contrast_threshold
        self.eps = eps
        self.delta_t = delta_t
        self.max_events_per_pixel = max_events_per_pixel
        self.append = append

    def _config(self):
        return SimConfig(self.contrast_threshold, self.eps, self.delta_t, self.max_events_per_pixel)

    def fit(self, X, y=None):
        check_clips(X, channels=3)
        self._config()
        return self

    def transform(self, X):
        X = check_clips(X, channels=3).astype(np.float64)
        cfg = self._config()
        ev = np.stack([clip_to_event_frames(clip, cfg) for clip in X])
        return np.concatenate([X, ev], axis=-1) if self.append else ev
