"""Event-guided low-light video semantic segmentation at toy scale."""

from ._validation import ConfigError, EventDataError, NumericError, ShapeError
from .estimator import EVSNetSegmenter
from .events import EventSimulator, SimConfig, events_to_frame, frames_to_events
from .lowlight import LowLightDegrader, LowLightParams, degrade, sample_params
from .model import EVSNet, ModelConfig, build_model

__all__ = [
    "ConfigError", "EventDataError", "NumericError", "ShapeError",
    "EVSNetSegmenter", "EventSimulator", "LowLightDegrader",
    "SimConfig", "events_to_frame", "frames_to_events",
    "LowLightParams", "degrade", "sample_params",
    "EVSNet", "ModelConfig", "build_model",
]
__version__ = "0.1.0"
