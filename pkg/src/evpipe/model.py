"""Domain types for event-camera recordings.

Events are held column-wise (``t``, ``x``, ``y``, ``p`` numpy arrays) because
every consumer works on whole slices; :class:`Event` exists for the
occasional per-event view. All containers freeze their arrays on construction.

Timestamps are int64 microseconds everywhere. Millisecond quantities are
converted with :func:`ms_to_us` at API boundaries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

DEFAULT_WIDTH = 346
DEFAULT_HEIGHT = 260

BBOX_ORIGINS = ("top-left", "lower-left")
_bbox_origin = "top-left"


def ms_to_us(ms: float) -> int:
    return int(round(ms * 1000))


def _frozen(a: np.ndarray) -> np.ndarray:
    if a.flags.writeable or not a.flags.c_contiguous:
        a = np.array(a, order="C")
        a.flags.writeable = False
    return a


class Polarity(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1


class ClassId(enum.IntEnum):
    CRACK = 0
    SPALLING = 1


CLASS_NAMES = {ClassId.CRACK: "crack", ClassId.SPALLING: "spalling"}


@dataclass(frozen=True)
class SensorGeometry:
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"sensor geometry must be at least 1x1, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        """(height, width), the numpy shape of one image plane."""
        return (self.height, self.width)


@dataclass(frozen=True)
class TimeWindow:
    """Closed interval [t_min, t_max] in microseconds."""

    t_min: int
    t_max: int

    def __post_init__(self):
        object.__setattr__(self, "t_min", int(self.t_min))
        object.__setattr__(self, "t_max", int(self.t_max))
        if self.t_min > self.t_max:
            raise ValueError(f"t_min {self.t_min} > t_max {self.t_max}")

    def __contains__(self, t) -> bool:
        return self.t_min <= t <= self.t_max

    @property
    def duration_us(self) -> int:
        return self.t_max - self.t_min


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    p: Polarity


class EventStream:
    """Time-ordered events from one sensor.

    The constructor coerces dtypes but does not check ordering or bounds;
    readers and :func:`validate_sequence` do that.
    """

    __slots__ = ("t", "x", "y", "p", "geometry")

    def __init__(self, t, x, y, p, geometry: SensorGeometry | None = None):
        t = np.asarray(t, dtype=np.int64)
        x = np.asarray(x, dtype=np.int32)
        y = np.asarray(y, dtype=np.int32)
        p = np.asarray(p, dtype=np.int8)
        if not (t.ndim == x.ndim == y.ndim == p.ndim == 1):
            raise ValueError("event columns must be 1-D")
        if not (len(t) == len(x) == len(y) == len(p)):
            raise ValueError("event columns differ in length")
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "geometry", geometry or SensorGeometry())

    def __setattr__(self, name, value):
        raise AttributeError("EventStream is immutable")

    @classmethod
    def empty(cls, geometry: SensorGeometry | None = None) -> "EventStream":
        return cls(np.empty(0), np.empty(0), np.empty(0), np.empty(0), geometry)

    @classmethod
    def from_array(cls, rows, geometry: SensorGeometry | None = None) -> "EventStream":
        """Build from an N x 4 array of (t, x, y, p) rows."""
        rows = np.asarray(rows)
        if rows.size == 0:
            return cls.empty(geometry)
        return cls(rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3], geometry)

    @classmethod
    def from_events(cls, events: Sequence[Event], geometry: SensorGeometry | None = None) -> "EventStream":
        if not events:
            return cls.empty(geometry)
        return cls.from_array([(e.t, e.x, e.y, int(e.p)) for e in events], geometry)

    def to_array(self) -> np.ndarray:
        out = np.empty((len(self), 4), dtype=np.int64)
        out[:, 0] = self.t
        out[:, 1] = self.x
        out[:, 2] = self.y
        out[:, 3] = self.p
        return out

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, key):
        if isinstance(key, slice):
            return EventStream(self.t[key], self.x[key], self.y[key], self.p[key], self.geometry)
        i = int(key)
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), Polarity(int(self.p[i])))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None

    def __repr__(self):
        span = f"{self.t[0]}..{self.t[-1]} us" if len(self) else "empty"
        return f"EventStream(n={len(self)}, {span}, {self.geometry.width}x{self.geometry.height})"

    @property
    def duration_us(self) -> int:
        return int(self.t[-1] - self.t[0]) if len(self) else 0


@dataclass(frozen=True, eq=False)
class Frame:
    t: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"frame must be 2-D, got shape {px.shape}")
        object.__setattr__(self, "t", int(self.t))
        object.__setattr__(self, "pixels", _frozen(px.astype(np.uint8, copy=False)))

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.t == other.t and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


def set_bbox_origin(origin: str) -> None:
    """Choose how the (bx, by) corner of stored boxes is read.

    ``"top-left"`` (default) treats ``by`` as the top edge in y-down image
    coordinates; ``"lower-left"`` treats it as the bottom edge.
    """
    global _bbox_origin
    if origin not in BBOX_ORIGINS:
        raise ValueError(f"bbox origin must be one of {BBOX_ORIGINS}, got {origin!r}")
    _bbox_origin = origin


def get_bbox_origin() -> str:
    return _bbox_origin


def bbox_to_xyxy(bbox) -> tuple[float, float, float, float]:
    """Stored (bx, by, w, h) -> (x0, y0, x1, y1) in y-down image coordinates."""
    bx, by, w, h = (float(v) for v in bbox)
    if _bbox_origin == "lower-left":
        return (bx, by - h, bx + w, by)
    return (bx, by, bx + w, by + h)


def xyxy_to_bbox(x0, y0, x1, y1) -> tuple[float, float, float, float]:
    w, h = float(x1 - x0), float(y1 - y0)
    if _bbox_origin == "lower-left":
        return (float(x0), float(y1), w, h)
    return (float(x0), float(y0), w, h)


@dataclass(frozen=True)
class Annotation:
    """A class-labelled box anchored at an event timestamp.

    Invariants (class id, positive size) are not enforced here so that
    :func:`validate_sequence` can report them; readers reject bad class ids.
    """

    t: int
    class_id: int
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "t", int(self.t))
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if len(self.bbox) != 4:
            raise ValueError("bbox must have 4 components (bx, by, w, h)")

    @property
    def xyxy(self):
        return bbox_to_xyxy(self.bbox)

    def to_row(self) -> list[float]:
        return [float(self.t), float(self.class_id), *self.bbox]


@dataclass(frozen=True)
class Detection(Annotation):
    score: float = 1.0
    image_id: str | int | None = field(default=None, compare=True)

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "score", float(self.score))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True, eq=False)
class SequenceRecording:
    events: EventStream
    frames: tuple[Frame, ...] = ()
    annotations: tuple[Annotation, ...] = ()
    frame_annotations: tuple[Annotation, ...] | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if self.frame_annotations is not None:
            object.__setattr__(self, "frame_annotations", tuple(self.frame_annotations))

    @property
    def geometry(self) -> SensorGeometry:
        return self.events.geometry

    def __eq__(self, other):
        if not isinstance(other, SequenceRecording):
            return NotImplemented
        return (
            self.events == other.events
            and self.frames == other.frames
            and self.annotations == other.annotations
            and self.frame_annotations == other.frame_annotations
        )

    __hash__ = None


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    index: int | None = None


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def first_inversion(ts) -> int | None:
    """Index i of the first element with ts[i] < ts[i-1], or None."""
    ts = np.asarray(ts)
    if len(ts) < 2:
        return None
    bad = np.flatnonzero(ts[1:] < ts[:-1])
    return int(bad[0]) + 1 if len(bad) else None


def _check_annotations(anns, geometry, label, out, t_range=None):
    for i, a in enumerate(anns):
        if a.class_id not in (0, 1):
            out.append(Violation("bad_class_id", f"{label}[{i}]: class_id {a.class_id} not in {{0, 1}}", i))
        _, _, w, h = a.bbox
        if not (w > 0 and h > 0):
            out.append(Violation("zero_area_box", f"{label}[{i}]: box {a.bbox} has non-positive size", i))
            continue
        x0, y0, x1, y1 = bbox_to_xyxy(a.bbox)
        if x1 <= 0 or y1 <= 0 or x0 >= geometry.width or y0 >= geometry.height:
            out.append(Violation("box_off_sensor", f"{label}[{i}]: box {a.bbox} misses the sensor plane", i))
        if t_range is not None and not (t_range[0] <= a.t <= t_range[1]):
            out.append(
                Violation(
                    "annotation_outside_events",
                    f"{label}[{i}]: t={a.t} outside event span [{t_range[0]}, {t_range[1]}]",
                    i,
                )
            )


def validate_sequence(seq: SequenceRecording) -> ValidationReport:
    """Collect every schema violation of ``seq``; an empty report means valid."""
    out: list[Violation] = []
    ev = seq.events
    geo = ev.geometry

    inv = first_inversion(ev.t)
    if inv is not None:
        out.append(Violation("unsorted_timestamps", f"events: t[{inv}] < t[{inv - 1}]", inv))
    for i in np.flatnonzero(ev.t < 0):
        out.append(Violation("negative_timestamp", f"events[{i}]: t={ev.t[i]}", int(i)))
    oob = (ev.x < 0) | (ev.x >= geo.width) | (ev.y < 0) | (ev.y >= geo.height)
    for i in np.flatnonzero(oob):
        out.append(
            Violation(
                "out_of_bounds",
                f"events[{i}]: ({ev.x[i]}, {ev.y[i]}) outside {geo.width}x{geo.height}",
                int(i),
            )
        )
    for i in np.flatnonzero((ev.p != 0) & (ev.p != 1)):
        out.append(Violation("bad_polarity", f"events[{i}]: polarity {ev.p[i]}", int(i)))

    frame_ts = [f.t for f in seq.frames]
    inv = first_inversion(frame_ts)
    if inv is not None:
        out.append(Violation("unsorted_frames", f"frames: t[{inv}] < t[{inv - 1}]", inv))
    for i, f in enumerate(seq.frames):
        if f.pixels.shape != geo.shape:
            out.append(Violation("frame_shape", f"frames[{i}]: shape {f.pixels.shape} != {geo.shape}", i))

    shared = seq.frame_annotations is None
    t_range = (int(ev.t.min()), int(ev.t.max())) if shared and len(ev) else None
    _check_annotations(seq.annotations, geo, "annotations", out, t_range)
    if not shared:
        _check_annotations(seq.frame_annotations, geo, "frame_annotations", out)
    return ValidationReport(tuple(out))
