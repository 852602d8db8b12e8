"""Readers and writers for recordings and sample bundles.

On-disk layout of one sequence directory::

    events.h5        dataset ``events``: N x 4 int64 rows (t_us, x, y, p)
    frames.h5        datasets ``frames`` (M x H x W uint8) and ``frame_ts`` (M int64)
    labels.npy       K x 6 float64 rows (t_us, class_id, bx, by, w, h)
    frame_labels.npy optional, same layout, for frame/event desynchronised sequences

``events.evt`` may replace ``events.h5``: a 16-byte header (8-byte magic,
then little-endian uint16 version, width, height, reserved) followed by the
same N x 4 little-endian int64 rows.

Every writer goes through a temporary file in the target directory and an
atomic rename.
"""

from __future__ import annotations

import contextlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import h5py
import numpy as np

from evpipe import npyfmt
from evpipe.errors import (
    BadShape,
    ContainerError,
    CoordinateOutOfBounds,
    MissingDataset,
    MissingRequiredArray,
    UnknownClassId,
    UnsortedTimestamps,
    WrongColumnCount,
)
from evpipe.model import (
    Annotation,
    EventStream,
    Frame,
    SensorGeometry,
    SequenceRecording,
    TimeWindow,
    first_inversion,
)

EVT_MAGIC = b"EVPIPEVT"
EVT_VERSION = 1
_EVT_HEADER = struct.Struct("<8sHHHH")
MAX_EXACT_TIMESTAMP = 2**53


@dataclass(frozen=True)
class SequenceLayout:
    events_path: Path
    frames_path: Path
    labels_path: Path
    frame_labels_path: Path | None = None

    @classmethod
    def in_dir(cls, root, desync: bool = False, fallback: bool = False) -> "SequenceLayout":
        root = Path(root)
        return cls(
            root / ("events.evt" if fallback else "events.h5"),
            root / "frames.h5",
            root / "labels.npy",
            root / "frame_labels.npy" if desync else None,
        )

    @classmethod
    def discover(cls, root) -> "SequenceLayout":
        """Layout of an existing directory; prefers events.h5 over events.evt."""
        root = Path(root)
        events = root / "events.h5"
        if not events.exists() and (root / "events.evt").exists():
            events = root / "events.evt"
        frame_labels = root / "frame_labels.npy"
        return cls(events, root / "frames.h5", root / "labels.npy", frame_labels if frame_labels.exists() else None)


@contextlib.contextmanager
def _atomic_path(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _geometry_from_attrs(attrs) -> SensorGeometry:
    if "width" in attrs and "height" in attrs:
        return SensorGeometry(int(attrs["width"]), int(attrs["height"]))
    return SensorGeometry()


def _check_event_rows(rows: np.ndarray, geometry: SensorGeometry, path) -> None:
    if rows.ndim != 2 or rows.shape[1] != 4:
        raise BadShape(f"{path}: events must be N x 4, got {rows.shape}")
    if rows.dtype.kind not in "iu":
        raise BadShape(f"{path}: events must be integer, got {rows.dtype}")
    if len(rows) == 0:
        return
    inv = first_inversion(rows[:, 0])
    if inv is not None:
        raise UnsortedTimestamps(f"{path}: event timestamp decreases at row {inv}", inv)
    x, y, p = rows[:, 1], rows[:, 2], rows[:, 3]
    bad = np.flatnonzero((x < 0) | (x >= geometry.width) | (y < 0) | (y >= geometry.height))
    if len(bad):
        i = int(bad[0])
        raise CoordinateOutOfBounds(
            f"{path}: row {i} at ({x[i]}, {y[i]}) outside {geometry.width}x{geometry.height} ({len(bad)} rows total)"
        )
    bad = np.flatnonzero((p != 0) & (p != 1))
    if len(bad):
        raise ContainerError(f"{path}: row {int(bad[0])} has polarity {p[bad[0]]}, expected 0 or 1")


def read_events(path, geometry: SensorGeometry | None = None) -> EventStream:
    """Load an event container (``.h5`` or ``.evt``).

    Geometry comes from the file unless given explicitly. Out-of-order
    timestamps raise rather than being re-sorted.
    """
    path = Path(path)
    if path.suffix == ".evt":
        return _read_evt(path, geometry)
    with h5py.File(path, "r") as f:
        if "events" not in f:
            raise MissingDataset(f"{path}: no 'events' dataset")
        ds = f["events"]
        geo = geometry or _geometry_from_attrs(ds.attrs)
        rows = ds[()]
    _check_event_rows(rows, geo, path)
    return EventStream.from_array(rows, geo)


def write_events(stream: EventStream, path) -> None:
    path = Path(path)
    if path.suffix == ".evt":
        return _write_evt(stream, path)
    rows = stream.to_array()
    with _atomic_path(path) as tmp:
        with h5py.File(tmp, "w") as f:
            ds = f.create_dataset("events", data=rows, dtype="<i8", track_times=False)
            ds.attrs["width"] = stream.geometry.width
            ds.attrs["height"] = stream.geometry.height
            ds.attrs["columns"] = "t_us,x,y,p"


def _write_evt(stream: EventStream, path: Path) -> None:
    geo = stream.geometry
    header = _EVT_HEADER.pack(EVT_MAGIC, EVT_VERSION, geo.width, geo.height, 0)
    with _atomic_path(path) as tmp:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(stream.to_array().astype("<i8").tobytes())


def _read_evt(path: Path, geometry: SensorGeometry | None) -> EventStream:
    data = path.read_bytes()
    if len(data) < _EVT_HEADER.size:
        raise BadShape(f"{path}: shorter than the {_EVT_HEADER.size}-byte header")
    magic, version, width, height, _ = _EVT_HEADER.unpack_from(data)
    if magic != EVT_MAGIC:
        raise MissingDataset(f"{path}: not an event container (bad magic {magic!r})")
    if version != EVT_VERSION:
        raise BadShape(f"{path}: unsupported version {version}")
    body = len(data) - _EVT_HEADER.size
    if body % 32:
        raise BadShape(f"{path}: payload of {body} bytes is not a whole number of 32-byte rows")
    rows = np.frombuffer(data, dtype="<i8", offset=_EVT_HEADER.size).reshape(-1, 4).astype(np.int64)
    geo = geometry or SensorGeometry(width, height)
    _check_event_rows(rows, geo, path)
    return EventStream.from_array(rows, geo)


def read_frames(path) -> list[Frame]:
    path = Path(path)
    with h5py.File(path, "r") as f:
        for name in ("frames", "frame_ts"):
            if name not in f:
                raise MissingDataset(f"{path}: no {name!r} dataset")
        pixels = f["frames"][()]
        ts = f["frame_ts"][()]
    if pixels.ndim != 3 or ts.ndim != 1 or len(ts) != len(pixels):
        raise BadShape(f"{path}: frames {pixels.shape} and frame_ts {ts.shape} disagree")
    if pixels.dtype != np.uint8:
        raise BadShape(f"{path}: frames must be uint8, got {pixels.dtype}")
    inv = first_inversion(ts)
    if inv is None and len(ts) > 1 and np.any(ts[1:] == ts[:-1]):
        inv = int(np.flatnonzero(ts[1:] == ts[:-1])[0]) + 1
    if inv is not None:
        raise UnsortedTimestamps(f"{path}: frame timestamps not increasing at index {inv}", inv)
    return [Frame(int(t), px) for t, px in zip(ts, pixels)]


def write_frames(frames, path, geometry: SensorGeometry | None = None) -> None:
    frames = list(frames)
    if frames:
        stack = np.stack([f.pixels for f in frames]).astype(np.uint8)
    else:
        geo = geometry or SensorGeometry()
        stack = np.zeros((0,) + geo.shape, dtype=np.uint8)
    ts = np.array([f.t for f in frames], dtype=np.int64)
    with _atomic_path(path) as tmp:
        with h5py.File(tmp, "w") as f:
            f.create_dataset("frames", data=stack, dtype="u1", track_times=False)
            f.create_dataset("frame_ts", data=ts, dtype="<i8", track_times=False)
            f.attrs["height"], f.attrs["width"] = stack.shape[1:]


def labels_to_array(anns) -> np.ndarray:
    anns = list(anns)
    out = np.zeros((len(anns), 6), dtype=np.float64)
    for i, a in enumerate(anns):
        if abs(a.t) >= MAX_EXACT_TIMESTAMP:
            raise ValueError(f"timestamp {a.t} not exactly representable as float64")
        out[i] = a.to_row()
    return out


def labels_from_array(rows: np.ndarray, source="labels") -> list[Annotation]:
    rows = np.asarray(rows)
    if rows.ndim == 1 and rows.size == 0:
        return []
    if rows.ndim != 2 or rows.shape[1] != 6:
        raise WrongColumnCount(f"{source}: expected K x 6 label rows, got shape {rows.shape}")
    if rows.dtype.kind not in "iuf":
        raise WrongColumnCount(f"{source}: label rows must be numeric, got {rows.dtype}")
    out = []
    for i, row in enumerate(rows):
        t, cls = row[0], row[1]
        if cls not in (0, 1):
            raise UnknownClassId(f"{source}: row {i} has class_id {cls}, expected 0 (crack) or 1 (spalling)")
        if t != np.floor(t):
            raise ContainerError(f"{source}: row {i} timestamp {t} is not a whole microsecond")
        out.append(Annotation(int(t), int(cls), tuple(float(v) for v in row[2:])))
    return out


def read_labels(path) -> list[Annotation]:
    return labels_from_array(npyfmt.load(path), str(path))


def write_labels(anns, path) -> None:
    rows = labels_to_array(anns)
    with _atomic_path(path) as tmp:
        npyfmt.save(tmp, rows)


def read_sequence(root, name: str | None = None) -> SequenceRecording:
    """Load a sequence directory. A missing frames file means no frames."""
    root = Path(root)
    layout = SequenceLayout.discover(root)
    for required in (layout.events_path, layout.labels_path):
        if not required.exists():
            raise FileNotFoundError(f"missing required file: {required}")
    events = read_events(layout.events_path)
    frames = read_frames(layout.frames_path) if layout.frames_path.exists() else []
    anns = read_labels(layout.labels_path)
    frame_anns = read_labels(layout.frame_labels_path) if layout.frame_labels_path else None
    return SequenceRecording(events, frames, anns, frame_anns, name=name or root.name)


def write_sequence(seq: SequenceRecording, root, fallback: bool = False) -> SequenceLayout:
    layout = SequenceLayout.in_dir(root, desync=seq.frame_annotations is not None, fallback=fallback)
    Path(root).mkdir(parents=True, exist_ok=True)
    write_events(seq.events, layout.events_path)
    write_frames(seq.frames, layout.frames_path, seq.geometry)
    write_labels(seq.annotations, layout.labels_path)
    if layout.frame_labels_path is not None:
        write_labels(seq.frame_annotations, layout.frame_labels_path)
    return layout


# sample bundles


def write_sample_bundle(bundle, path, compress: bool = False) -> None:
    """Write a bundle as NPZ with arrays hist, labels, meta and optional frame."""
    meta = bundle.meta()
    arrays = {
        "hist": np.asarray(bundle.histogram.values, dtype=np.float64),
        "labels": labels_to_array(bundle.annotations),
        "meta": np.array(json.dumps(meta, sort_keys=True)),
    }
    if bundle.frame is not None:
        arrays["frame"] = np.asarray(bundle.frame, dtype=np.float64)
    with _atomic_path(path) as tmp:
        with open(tmp, "wb") as fh:
            npyfmt.savez(fh, arrays, compress)


def read_sample_bundle(path):
    from evpipe.association import SampleBundle

    arrays = npyfmt.loadz(path)
    for name in ("hist", "labels", "meta"):
        if name not in arrays:
            raise MissingRequiredArray(f"{path}: bundle lacks {name!r}")
    hist = arrays["hist"]
    if hist.ndim != 3 or hist.shape[0] != 2:
        raise BadShape(f"{path}: hist must be 2 x H x W, got {hist.shape}")
    meta = json.loads(str(arrays["meta"][()]))
    anns = labels_from_array(arrays["labels"], str(path))
    return SampleBundle.from_parts(hist, arrays.get("frame"), anns, meta)


def window_from_meta(meta) -> TimeWindow:
    return TimeWindow(*meta["window"])
