"""Temporal association of frames, event volumes and annotations, and sample extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from evpipe.encoding import (
    CLIP_SIGMA,
    EncoderConfig,
    EventVolume,
    NormalizedHistogram,
    cell_index,
    histogram_from_volume,
    select_volume,
)
from evpipe.errors import EncoderNeverSatisfiable, SelectionError
from evpipe.frame_prep import PrepConfig, clahe, normalize_unit
from evpipe.model import Annotation, EventStream, SequenceRecording, TimeWindow, ms_to_us

log = logging.getLogger(__name__)

ANCHOR_MARGIN_PACKETS = 64


@dataclass(frozen=True, eq=False)
class SampleBundle:
    histogram: NormalizedHistogram
    annotations: tuple[Annotation, ...]
    window: TimeWindow
    frame: np.ndarray | None = None
    sequence_id: str = ""
    anchor_id: int | None = None
    frame_t: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))

    @property
    def params(self) -> dict:
        return self.histogram.params

    def meta(self) -> dict:
        h = self.histogram
        return {
            "window": [self.window.t_min, self.window.t_max],
            "sequence_id": self.sequence_id,
            "anchor_id": self.anchor_id,
            "frame_t": self.frame_t,
            "encoder": h.params,
            "index_range": list(h.index_range) if h.index_range else None,
            "polarity_counts": list(h.polarity_counts) if h.polarity_counts else None,
            "sigma": h.sigma,
            "clip_sigma": h.clip_sigma,
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_parts(cls, hist, frame, annotations, meta) -> "SampleBundle":
        window = TimeWindow(*meta["window"])
        nh = NormalizedHistogram(
            np.asarray(hist, dtype=np.float64),
            window,
            params=meta.get("encoder") or {},
            sigma=float(meta.get("sigma", 0.0)),
            clip_sigma=float(meta.get("clip_sigma", CLIP_SIGMA)),
            index_range=tuple(meta["index_range"]) if meta.get("index_range") else None,
            polarity_counts=tuple(meta["polarity_counts"]) if meta.get("polarity_counts") else None,
        )
        return cls(
            nh,
            tuple(annotations),
            window,
            frame,
            meta.get("sequence_id", ""),
            meta.get("anchor_id"),
            meta.get("frame_t"),
            meta.get("extra", {}),
        )

    def __eq__(self, other):
        if not isinstance(other, SampleBundle):
            return NotImplemented
        same_frame = (self.frame is None and other.frame is None) or (
            self.frame is not None and other.frame is not None and np.array_equal(self.frame, other.frame)
        )
        return (
            same_frame
            and self.histogram == other.histogram
            and self.annotations == other.annotations
            and self.window == other.window
            and self.sequence_id == other.sequence_id
            and self.anchor_id == other.anchor_id
            and self.frame_t == other.frame_t
        )

    __hash__ = None


def _index_range(ts, t_min, t_max) -> tuple[int, int]:
    lo = int(np.searchsorted(ts, t_min, side="left"))
    hi = int(np.searchsorted(ts, t_max, side="right"))
    return lo, hi


def events_for_frame(stream: EventStream, frame_t: int, half_window_ms: float = 10.0) -> EventStream:
    """Events with t in [frame_t - half_window, frame_t + half_window], inclusive.

    May be empty; unlike the histogram selectors this never raises.
    """
    half = ms_to_us(half_window_ms)
    lo, hi = _index_range(stream.t, frame_t - half, frame_t + half)
    return stream[lo:hi]


def annotations_for_window(anns, window: TimeWindow) -> list[Annotation]:
    ts = np.fromiter((a.t for a in anns), dtype=np.int64, count=len(anns))
    if len(ts) > 1 and np.any(ts[1:] < ts[:-1]):
        order = np.argsort(ts, kind="stable")
        anns = [anns[i] for i in order]
        ts = ts[order]
    lo, hi = _index_range(ts, window.t_min, window.t_max)
    return list(anns[lo:hi])


def annotations_for_frame(anns, frame_t: int, half_window_ms: float = 10.0) -> list[Annotation]:
    half = ms_to_us(half_window_ms)
    return annotations_for_window(anns, TimeWindow(frame_t - half, frame_t + half))


def nearest_frame(frames, t: int, half_window_ms: float = 10.0):
    """Frame whose timestamp is closest to t within the half window, or None."""
    if not frames:
        return None
    ts = np.array([f.t for f in frames], dtype=np.int64)
    i = int(np.argmin(np.abs(ts - t)))
    return frames[i] if abs(int(ts[i]) - t) <= ms_to_us(half_window_ms) else None


def anchor_pool(n_events: int, q: int) -> tuple[int, int]:
    """[lo, hi) anchor index range, skipping q*64 events at each end when possible."""
    margin = q * ANCHOR_MARGIN_PACKETS
    if n_events > 2 * margin:
        return margin, n_events - margin
    return 0, n_events


def make_bundle(
    seq: SequenceRecording,
    volume: EventVolume,
    cfg: EncoderConfig,
    prep: PrepConfig | None = None,
) -> SampleBundle:
    hist = histogram_from_volume(volume, cfg)
    window = hist.window
    anchor_t = int(seq.events.t[volume.anchor_id]) if volume.anchor_id is not None else window.t_min
    frame = nearest_frame(seq.frames, anchor_t, cfg.half_window_ms)
    pixels = normalize_unit(clahe(frame, prep)) if frame is not None else None
    return SampleBundle(
        hist,
        annotations_for_window(seq.annotations, window),
        window,
        pixels,
        seq.name,
        volume.anchor_id,
        frame.t if frame is not None else None,
    )


def extract_samples(
    seq: SequenceRecording,
    encoder: EncoderConfig,
    count_range: tuple[int, int] = (10, 15),
    rng_seed: int = 0,
    prep: PrepConfig | None = None,
    max_attempts: int | None = None,
) -> list[SampleBundle]:
    """Draw a seeded random number of anchors and encode a bundle around each.

    The target count is uniform on ``count_range`` (inclusive). Anchors whose
    volume cannot be selected are skipped and replaced by fresh draws; a
    shortfall is logged. If no anchor succeeds :class:`EncoderNeverSatisfiable`
    is raised. Bundles are returned in anchor order.
    """
    lo_k, hi_k = count_range
    if not 1 <= lo_k <= hi_k:
        raise ValueError(f"bad count range {count_range}")
    rng = np.random.default_rng(rng_seed)
    target = int(rng.integers(lo_k, hi_k + 1))
    stream = seq.events
    if len(stream) == 0:
        raise EncoderNeverSatisfiable(f"sequence {seq.name!r} has no events")
    lo, hi = anchor_pool(len(stream), encoder.q)
    attempts = min(hi - lo, max_attempts or 20 * target)
    anchors = lo + rng.choice(hi - lo, size=attempts, replace=False)

    cells = None
    if encoder.mode in ("adaptive", "grid_threshold"):
        cells = cell_index(stream.x, stream.y, stream.geometry, encoder.grid_m, encoder.grid_n)

    chosen: list[EventVolume] = []
    failures = 0
    last_error = None
    for anchor in anchors:
        try:
            chosen.append(select_volume(stream, int(anchor), encoder, cells))
        except SelectionError as exc:
            failures += 1
            last_error = exc
            continue
        if len(chosen) == target:
            break

    if not chosen:
        raise EncoderNeverSatisfiable(
            f"sequence {seq.name!r}: none of {attempts} anchors produced a volume ({last_error})"
        )
    if len(chosen) < target:
        log.warning(
            "sequence %r: %d of %d requested samples (%d anchors failed)", seq.name, len(chosen), target, failures
        )
    chosen.sort(key=lambda v: v.anchor_id)
    return [make_bundle(seq, vol, encoder, prep) for vol in chosen]


def verify_bundle(bundle: SampleBundle, seq: SequenceRecording | None = None) -> list[str]:
    """Independently re-check a bundle; returns a list of problems (empty when sound).

    Without ``seq`` only self-contained checks run. With it, the histogram is
    rebuilt from the raw events by per-event accumulation and compared, and
    the adaptive stopping rule is re-evaluated from scratch.
    """
    problems = []
    w = bundle.window
    for i, a in enumerate(bundle.annotations):
        if not w.t_min <= a.t <= w.t_max:
            problems.append(f"annotation {i} at t={a.t} outside window [{w.t_min}, {w.t_max}]")
    vals = bundle.histogram.values
    if vals.size and (vals.min() < 0 or vals.max() > 1):
        problems.append("histogram values outside [0, 1]")
    per_channel = bool(bundle.params.get("per_channel_norm", False))
    if vals.size and vals.max() > 0 and not per_channel and vals.max() != 1.0:
        problems.append(f"histogram max is {vals.max()}, expected 1")
    if bundle.frame is not None and (bundle.frame.min() < 0 or bundle.frame.max() > 1):
        problems.append("frame values outside [0, 1]")
    if seq is None or bundle.histogram.index_range is None:
        return problems

    sid, eid = bundle.histogram.index_range
    ev = seq.events
    if not 0 <= sid < eid <= len(ev):
        return problems + [f"index range [{sid}, {eid}) outside stream of {len(ev)} events"]
    t, x, y, p = ev.t[sid:eid], ev.x[sid:eid], ev.y[sid:eid], ev.p[sid:eid]
    if (int(t[0]), int(t[-1])) != (w.t_min, w.t_max):
        problems.append(f"window [{w.t_min}, {w.t_max}] differs from events span [{t[0]}, {t[-1]}]")
    geo = ev.geometry
    raw = np.zeros((2,) + geo.shape, dtype=np.int64)
    np.add.at(raw, (1 - p.astype(np.int64), y, x), 1)
    n_pos, n_neg = int((p == 1).sum()), int((p == 0).sum())
    if (int(raw[0].sum()), int(raw[1].sum())) != (n_pos, n_neg):
        problems.append("channel sums differ from per-polarity event counts")
    if bundle.histogram.polarity_counts is not None and tuple(bundle.histogram.polarity_counts) != (n_pos, n_neg):
        problems.append(f"recorded polarity counts {bundle.histogram.polarity_counts} != ({n_pos}, {n_neg})")
    sigma = raw.std()
    clipped = np.minimum(raw, 3 * sigma) if sigma > 0 else raw.astype(np.float64)
    if per_channel:
        peak = clipped.max(axis=(1, 2), keepdims=True)
        expect = np.divide(clipped, peak, out=np.zeros_like(clipped, dtype=np.float64), where=peak > 0)
    else:
        expect = clipped / clipped.max() if clipped.max() > 0 else np.zeros(raw.shape)
    if expect.shape != vals.shape or not np.allclose(expect, vals, rtol=0, atol=1e-12):
        problems.append("histogram differs from independent recomputation")

    params = bundle.params
    if params.get("mode") == "adaptive":
        m, n = params["grid_m"], params["grid_n"]
        bh, bw = geo.height // m, geo.width // n
        cells = np.minimum(y // bh, m - 1) * n + np.minimum(x // bw, n - 1)
        counts = np.bincount(cells, minlength=m * n)
        excess = counts.max() - counts.sum() / (m * n)
        duration = int(t[-1] - t[0])
        if not duration > ms_to_us(params["t_th_ms"]):
            problems.append(f"duration {duration} us not above {params['t_th_ms']} ms")
        if not excess > params["a_th"]:
            problems.append(f"cell excess {excess} not above {params['a_th']}")
    return problems
