"""Auto-zoom actor tracking and temporal reasoning for aerial action clips."""

from .core import (BBox, FrameBuffer, KeyFrameSchedule, Provenance, Track, TrackEntry, ValidationError,
                   center_distance, schedule_keyframes)
from .locator import (DetectionSet, DetectorHandle, DetectorUnavailable, best_detection, filter_by_score,
                      load_detections, query_detector)
from .zoom import (BootstrapError, PredictionState, ZoomParams, auto_zoom_clip, build_track, crop_region,
                   interpolate, predict_next, resize_bilinear, select_crop_shape, select_crop_size, validate)

__all__ = [
    "BBox", "FrameBuffer", "KeyFrameSchedule", "Provenance", "Track", "TrackEntry", "ValidationError",
    "center_distance", "schedule_keyframes",
    "DetectionSet", "DetectorHandle", "DetectorUnavailable", "best_detection", "filter_by_score",
    "load_detections", "query_detector",
    "BootstrapError", "PredictionState", "ZoomParams", "auto_zoom_clip", "build_track", "crop_region",
    "interpolate", "predict_next", "resize_bilinear", "select_crop_shape", "select_crop_size", "validate",
]

__version__ = "0.1.0"
