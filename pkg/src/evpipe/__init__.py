"""Event-camera defect-inspection data pipeline.

Sequence containers, frame/event/annotation association, 2-channel event
histograms (fixed-time, fixed-count, grid-threshold and adaptive volume
selection), frame preprocessing, detection metrics and a synthetic sensor.
"""

from evpipe.kernels import BACKEND
from evpipe.model import (
    Annotation,
    ClassId,
    Detection,
    Event,
    EventStream,
    Frame,
    Polarity,
    SensorGeometry,
    SequenceRecording,
    TimeWindow,
    validate_sequence,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Annotation",
    "ClassId",
    "Detection",
    "Event",
    "EventStream",
    "Frame",
    "Polarity",
    "SensorGeometry",
    "SequenceRecording",
    "TimeWindow",
    "validate_sequence",
    "__version__",
]
