"""Event-volume selection and 2-channel event histograms.

Four ways of choosing which events go into a histogram:

* ``fixed_time``: every event within ``window_ms`` centred on a timestamp.
* ``fixed_count``: a fixed number of events centred on an anchor event.
* ``grid_threshold``: from a start event until one cell of an m x n grid
  holds more than ``cell_threshold`` events.
* ``adaptive``: grow ``q`` events per side around an anchor until the
  volume lasts longer than ``t_th_ms`` *and* the busiest grid cell exceeds
  the mean cell count by more than ``a_th``.

The selected events are binned per pixel and polarity, clipped at three
standard deviations and scaled to a maximum of one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from evpipe import kernels
from evpipe.errors import EmptyWindow, NeverSatisfied
from evpipe.model import EventStream, SensorGeometry, TimeWindow, ms_to_us

MODES = ("fixed_time", "fixed_count", "grid_threshold", "adaptive")
LIGHTING_T_TH_MS = {"well-lit": 15.0, "low-light": 30.0}
CLIP_SIGMA = 3.0


@dataclass(frozen=True)
class EncoderConfig:
    mode: str = "adaptive"
    t_th_ms: float = 15.0
    a_th: float = 175.0
    q: int = 100
    grid_m: int = 4
    grid_n: int = 4
    window_ms: float | None = None  # fixed_time length; falls back to t_th_ms
    count: int = 5000
    cell_threshold: int = 200
    half_window_ms: float = 10.0
    per_channel_norm: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        positive = {
            "t_th_ms": self.t_th_ms,
            "a_th": self.a_th,
            "q": self.q,
            "grid_m": self.grid_m,
            "grid_n": self.grid_n,
            "count": self.count,
            "cell_threshold": self.cell_threshold,
            "half_window_ms": self.half_window_ms,
        }
        if self.window_ms is not None:
            positive["window_ms"] = self.window_ms
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @property
    def grid(self) -> tuple[int, int]:
        return (self.grid_m, self.grid_n)

    @property
    def fixed_window_ms(self) -> float:
        return self.window_ms if self.window_ms is not None else self.t_th_ms

    @classmethod
    def for_lighting(cls, lighting: str, **overrides) -> "EncoderConfig":
        """Defaults with the minimum duration picked by lighting regime."""
        try:
            t_th = LIGHTING_T_TH_MS[lighting]
        except KeyError:
            raise ValueError(f"lighting must be one of {sorted(LIGHTING_T_TH_MS)}") from None
        return cls(**{"t_th_ms": t_th, **overrides})

    @classmethod
    def from_dict(cls, doc: dict) -> "EncoderConfig":
        doc = dict(doc)
        aliases = {"T_th_ms": "t_th_ms", "A_th": "a_th", "N": "count", "C": "cell_threshold"}
        for old, new in aliases.items():
            if old in doc:
                doc[new] = doc.pop(old)
        if "grid" in doc:
            doc["grid_m"], doc["grid_n"] = doc.pop("grid")
        lighting = doc.pop("lighting", None)
        if lighting is not None and "t_th_ms" not in doc:
            doc["t_th_ms"] = LIGHTING_T_TH_MS[lighting]
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown encoder keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "EncoderConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class EventVolume:
    """Events ``stream[sid:eid]`` picked by one of the selectors."""

    stream: EventStream
    sid: int
    eid: int
    anchor_id: int | None = None

    def __post_init__(self):
        if not 0 <= self.sid < self.eid <= len(self.stream):
            raise EmptyWindow(f"volume [{self.sid}, {self.eid}) is empty or out of range")

    @property
    def events(self) -> EventStream:
        return self.stream[self.sid : self.eid]

    @property
    def window(self) -> TimeWindow:
        return TimeWindow(self.stream.t[self.sid], self.stream.t[self.eid - 1])

    def __len__(self):
        return self.eid - self.sid


@dataclass(frozen=True, eq=False)
class Histogram2C:
    counts: np.ndarray  # (2, H, W) int64; [0] positive, [1] negative
    window: TimeWindow
    geometry: SensorGeometry

    @property
    def counts_pos(self) -> np.ndarray:
        return self.counts[0]

    @property
    def counts_neg(self) -> np.ndarray:
        return self.counts[1]


@dataclass(frozen=True, eq=False)
class NormalizedHistogram:
    values: np.ndarray  # (2, H, W) float64 in [0, 1]
    window: TimeWindow
    params: dict = field(default_factory=dict)
    sigma: float = 0.0
    clip_sigma: float = CLIP_SIGMA
    index_range: tuple[int, int] | None = None
    polarity_counts: tuple[int, int] | None = None

    def __eq__(self, other):
        if not isinstance(other, NormalizedHistogram):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and self.window == other.window
            and self.params == other.params
            and self.index_range == other.index_range
            and self.polarity_counts == other.polarity_counts
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GridSummary:
    m: int
    n: int
    cell_counts: np.ndarray  # (m, n)
    mean: float
    max_excess: float


def cell_bounds(size: int, parts: int) -> np.ndarray:
    """Cell edges along one axis; the last cell absorbs the remainder."""
    if not 1 <= parts <= size:
        raise ValueError(f"cannot split {size} pixels into {parts} cells")
    step = size // parts
    edges = np.arange(parts + 1) * step
    edges[-1] = size
    return edges


def cell_index(x, y, geometry: SensorGeometry, m: int, n: int) -> np.ndarray:
    """Row-major grid cell id of every event for an m-row, n-column grid."""
    bh = geometry.height // m
    bw = geometry.width // n
    if bh == 0 or bw == 0:
        raise ValueError(f"grid {m}x{n} is finer than the {geometry.width}x{geometry.height} sensor")
    row = np.minimum(np.asarray(y) // bh, m - 1)
    col = np.minimum(np.asarray(x) // bw, n - 1)
    return (row * n + col).astype(np.int32)


def grid_summary(volume: EventVolume, m: int = 4, n: int = 4) -> GridSummary:
    ev = volume.events
    cells = cell_index(ev.x, ev.y, ev.geometry, m, n)
    counts = np.bincount(cells, minlength=m * n).reshape(m, n)
    mean = counts.sum() / (m * n)
    return GridSummary(m, n, counts, float(mean), float(counts.max() - mean))


def build_histogram(volume: EventVolume) -> Histogram2C:
    ev = volume.events
    geo = ev.geometry
    counts = kernels.histogram2c(ev.x, ev.y, ev.p, geo.height, geo.width)
    return Histogram2C(counts, volume.window, geo)


def clip_and_normalize(hist: Histogram2C, per_channel: bool = False) -> NormalizedHistogram:
    """Clip every bin at 3 sigma (joint over both channels) and divide by the max.

    A zero sigma skips the clip; an all-zero histogram stays all zero.
    """
    raw = hist.counts.astype(np.float64)
    sigma = float(raw.std())
    clipped = np.minimum(raw, CLIP_SIGMA * sigma) if sigma > 0 else raw
    if per_channel:
        peak = clipped.max(axis=(1, 2), keepdims=True)
        values = np.divide(clipped, peak, out=np.zeros_like(clipped), where=peak > 0)
    else:
        peak = clipped.max() if clipped.size else 0.0
        values = clipped / peak if peak > 0 else np.zeros_like(clipped)
    return NormalizedHistogram(values, hist.window, sigma=sigma)


def _require_nonempty(stream: EventStream):
    if len(stream) == 0:
        raise EmptyWindow("event stream is empty")


def select_fixed_time(stream: EventStream, center_t: int, window_ms: float) -> EventVolume:
    """Events with t in [center - T/2, center + T/2], both ends included."""
    half = ms_to_us(window_ms) / 2
    lo = math.ceil(center_t - half)
    hi = math.floor(center_t + half)
    sid = int(np.searchsorted(stream.t, lo, side="left"))
    eid = int(np.searchsorted(stream.t, hi, side="right"))
    if eid <= sid:
        raise EmptyWindow(f"no events in [{lo}, {hi}] us")
    return EventVolume(stream, sid, eid)


def select_fixed_count(stream: EventStream, anchor_id: int, count: int) -> EventVolume:
    """``count`` events centred on the anchor (count // 2 before it), clamped to the stream."""
    _require_nonempty(stream)
    n = len(stream)
    if not 0 <= anchor_id < n:
        raise IndexError(f"anchor {anchor_id} outside stream of {n} events")
    size = min(count, n)
    sid = min(max(anchor_id - count // 2, 0), n - size)
    return EventVolume(stream, sid, sid + size, anchor_id)


def select_grid_threshold(
    stream: EventStream, start_id: int, grid: tuple[int, int], cell_threshold: int, cells=None
) -> EventVolume:
    _require_nonempty(stream)
    if not 0 <= start_id < len(stream):
        raise IndexError(f"start {start_id} outside stream of {len(stream)} events")
    m, n = grid
    if cells is None:
        cells = cell_index(stream.x, stream.y, stream.geometry, m, n)
    eid = kernels.grid_threshold_search(cells, start_id, int(cell_threshold), m * n)
    if eid < 0:
        raise NeverSatisfied(f"no {m}x{n} grid cell exceeds {cell_threshold} events after event {start_id}")
    return EventVolume(stream, start_id, int(eid), start_id)


def select_adaptive(stream: EventStream, anchor_id: int, cfg: EncoderConfig, cells=None) -> EventVolume:
    """Grow a volume around ``anchor_id`` by ``cfg.q`` events per side per step.

    Step k covers ``stream[anchor - q*k : anchor + q*k]`` with both ends
    clamped to the stream. The first step whose volume lasts strictly longer
    than ``t_th_ms`` and whose busiest grid cell beats the mean cell count by
    strictly more than ``a_th`` is returned. Duration is measured between the
    first and last event of the volume.
    """
    _require_nonempty(stream)
    if not 0 <= anchor_id < len(stream):
        raise IndexError(f"anchor {anchor_id} outside stream of {len(stream)} events")
    m, n = cfg.grid
    if cells is None:
        cells = cell_index(stream.x, stream.y, stream.geometry, m, n)
    sid, eid, k = kernels.adaptive_search(
        stream.t, cells, int(anchor_id), int(cfg.q), float(ms_to_us(cfg.t_th_ms)), float(cfg.a_th), m * n
    )
    if sid < 0:
        raise NeverSatisfied(
            f"anchor {anchor_id}: whole stream ({len(stream)} events, {k} steps) never reached "
            f"duration > {cfg.t_th_ms} ms with cell excess > {cfg.a_th}"
        )
    return EventVolume(stream, int(sid), int(eid), anchor_id)


def adaptive_trace(stream: EventStream, anchor_id: int, cfg: EncoderConfig):
    """Yield (k, sid, eid, duration_us, excess) for each growth step.

    Recomputes every step from scratch; meant for inspection and tests, not speed.
    """
    m, n = cfg.grid
    cells = cell_index(stream.x, stream.y, stream.geometry, m, n)
    size = len(stream)
    k = 0
    while True:
        k += 1
        sid = max(anchor_id - cfg.q * k, 0)
        eid = min(anchor_id + cfg.q * k, size)
        counts = np.bincount(cells[sid:eid], minlength=m * n)
        excess = counts.max() - counts.sum() / (m * n)
        yield k, sid, eid, int(stream.t[eid - 1] - stream.t[sid]), float(excess)
        if sid == 0 and eid == size:
            return


def select_volume(stream: EventStream, anchor_id: int, cfg: EncoderConfig, cells=None) -> EventVolume:
    """Dispatch on ``cfg.mode``; fixed_time centres on the anchor's timestamp."""
    if cfg.mode == "fixed_time":
        _require_nonempty(stream)
        vol = select_fixed_time(stream, int(stream.t[anchor_id]), cfg.fixed_window_ms)
        return EventVolume(stream, vol.sid, vol.eid, anchor_id)
    if cfg.mode == "fixed_count":
        return select_fixed_count(stream, anchor_id, cfg.count)
    if cfg.mode == "grid_threshold":
        return select_grid_threshold(stream, anchor_id, cfg.grid, cfg.cell_threshold, cells)
    return select_adaptive(stream, anchor_id, cfg, cells)


def histogram_from_volume(volume: EventVolume, cfg: EncoderConfig) -> NormalizedHistogram:
    hist = build_histogram(volume)
    norm = clip_and_normalize(hist, per_channel=cfg.per_channel_norm)
    n_pos = int(hist.counts[0].sum())
    n_neg = int(hist.counts[1].sum())
    return replace(
        norm,
        params=cfg.to_dict(),
        index_range=(volume.sid, volume.eid),
        polarity_counts=(n_pos, n_neg),
    )


def encode(stream: EventStream, anchor_or_center: int, cfg: EncoderConfig, cells=None) -> NormalizedHistogram:
    """Select a volume, bin it and clip/normalise it.

    ``anchor_or_center`` is a timestamp in microseconds for ``fixed_time``
    and an event index for every other mode.
    """
    if cfg.mode == "fixed_time":
        volume = select_fixed_time(stream, anchor_or_center, cfg.fixed_window_ms)
    else:
        volume = select_volume(stream, anchor_or_center, cfg, cells)
    return histogram_from_volume(volume, cfg)
