"""Synthetic recordings from an ideal log-intensity threshold sensor.

A pattern is drawn once on a small anti-aliased canvas and translated across
a uniform background at constant velocity. The scene is rendered every
millisecond; between consecutive renders each pixel integrates its change in
log intensity and fires one event per contrast threshold crossed, carrying
the sub-threshold remainder forward.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np

from evpipe.model import (
    Annotation,
    ClassId,
    EventStream,
    Frame,
    SensorGeometry,
    SequenceRecording,
    xyxy_to_bbox,
)

KINDS = ("crack_polyline", "spalling_blob", "bar", "checker")
_DEFAULT_CLASS = {
    "crack_polyline": ClassId.CRACK,
    "bar": ClassId.CRACK,
    "spalling_blob": ClassId.SPALLING,
    "checker": ClassId.SPALLING,
}
SUBSTEP_US = 1000
SUPERSAMPLE = 4


@dataclass(frozen=True)
class ScenePattern:
    kind: str = "crack_polyline"
    width: int = 120  # extent of the pattern in pixels
    height: int = 90
    foreground: float = 40.0
    background: float = 180.0
    thickness: float = 3.0  # crack stroke width / checker square size
    class_id: int | None = None
    position: tuple[float, float] | None = None  # top-left at t=0; default centred

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"pattern kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("foreground", "background"):
            v = getattr(self, name)
            if not 0 < v <= 255:
                raise ValueError(f"{name} intensity must lie in (0, 255], got {v}")
        if self.width < 2 or self.height < 2:
            raise ValueError("pattern must be at least 2x2 pixels")
        if self.class_id is None:
            object.__setattr__(self, "class_id", int(_DEFAULT_CLASS[self.kind]))
        if self.position is not None:
            object.__setattr__(self, "position", tuple(float(v) for v in self.position))


@dataclass(frozen=True)
class MotionSpec:
    velocity: tuple[float, float] = (80.0, 0.0)  # px/s along x, y
    duration_s: float = 2.0
    frame_rate_hz: float = 30.0
    contrast_threshold: float = 0.2
    label_rate_hz: float = 100.0
    noise_rate_hz: float = 0.0  # per-pixel Poisson rate of spurious events

    def __post_init__(self):
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if not 5 <= self.frame_rate_hz <= 35:
            raise ValueError(f"frame rate must lie in [5, 35] Hz, got {self.frame_rate_hz}")
        if not self.contrast_threshold > 0:
            raise ValueError("contrast threshold must be positive")
        if not self.duration_s > 0:
            raise ValueError("duration must be positive")
        if self.label_rate_hz < 15:
            raise ValueError("labels must be emitted at 15 Hz or more")
        if self.noise_rate_hz < 0:
            raise ValueError("noise rate cannot be negative")


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to render one synthetic sequence."""

    pattern: ScenePattern = field(default_factory=ScenePattern)
    motion: MotionSpec = field(default_factory=MotionSpec)
    geometry: SensorGeometry = field(default_factory=SensorGeometry)
    seed: int = 0
    name: str = "synthetic"

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneSpec":
        doc = dict(doc)
        pattern = ScenePattern(**doc.pop("pattern", {}))
        motion = MotionSpec(**doc.pop("motion", {}))
        geo = doc.pop("geometry", None)
        geometry = SensorGeometry(**geo) if geo else SensorGeometry()
        return cls(pattern, motion, geometry, **doc)

    def to_dict(self) -> dict:
        return asdict(self)


def draw_canvas(pattern: ScenePattern, rng: np.random.Generator) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Anti-aliased float32 canvas with a 2 px background border.

    Returns the canvas and the pattern's pixel extent (x0, y0, x1, y1),
    end-exclusive, in canvas coordinates.
    """
    border = 2
    w, h = pattern.width, pattern.height
    ss = SUPERSAMPLE
    cov = np.zeros(((h + 2 * border) * ss, (w + 2 * border) * ss), dtype=np.uint8)
    off = border * ss
    if pattern.kind == "bar":
        cov[off : off + h * ss, off : off + w * ss] = 255
    elif pattern.kind == "checker":
        sq = max(int(round(pattern.thickness * ss)), 1)
        yy, xx = np.mgrid[0 : h * ss, 0 : w * ss]
        cov[off : off + h * ss, off : off + w * ss] = (((yy // sq) + (xx // sq)) % 2 == 0) * 255
    elif pattern.kind == "crack_polyline":
        npts = 6
        xs = np.linspace(0, w - 1, npts)
        ys = rng.uniform(0.15 * h, 0.85 * h, npts)
        ys[0], ys[-1] = rng.uniform(0, 0.3 * h), rng.uniform(0.7 * h, h - 1)
        pts = np.stack([xs, ys], axis=1) * ss + off
        thick = max(int(round(pattern.thickness * ss)), 1)
        cv2.polylines(cov, [np.round(pts).astype(np.int32)], False, 255, thickness=thick, lineType=cv2.LINE_8)
    else:  # spalling_blob
        angles = np.sort(rng.uniform(0, 2 * np.pi, 14))
        radii = rng.uniform(0.6, 1.0, len(angles))
        cx, cy = (w - 1) / 2, (h - 1) / 2
        px = cx + radii * (w / 2 - 1) * np.cos(angles)
        py = cy + radii * (h / 2 - 1) * np.sin(angles)
        pts = np.stack([px, py], axis=1) * ss + off
        cv2.fillPoly(cov, [np.round(pts).astype(np.int32)], 255)
    coverage = cv2.resize(
        cov.astype(np.float32) / 255.0, (w + 2 * border, h + 2 * border), interpolation=cv2.INTER_AREA
    )
    canvas = pattern.background + (pattern.foreground - pattern.background) * coverage
    ys_, xs_ = np.nonzero(coverage > 1e-6)
    if len(xs_) == 0:
        extent = (border, border, border + 1, border + 1)
    else:
        extent = (int(xs_.min()), int(ys_.min()), int(xs_.max()) + 1, int(ys_.max()) + 1)
    return canvas.astype(np.float32), extent


def place(canvas: np.ndarray, ox: float, oy: float, geometry: SensorGeometry, background: float) -> np.ndarray:
    """Render the canvas with its top-left at real position (ox, oy), bilinearly."""
    img = np.full(geometry.shape, background, dtype=np.float32)
    ch, cw = canvas.shape
    ix, iy = math.floor(ox), math.floor(oy)
    fx, fy = np.float32(ox - ix), np.float32(oy - iy)
    cp = np.full((ch + 2, cw + 2), background, dtype=np.float32)
    cp[1:-1, 1:-1] = canvas
    # s[k] samples the canvas at k - frac, k = 0..size
    sx = (1 - fx) * cp[:, 1:] + fx * cp[:, :-1]
    s = (1 - fy) * sx[1:, :] + fy * sx[:-1, :]
    x0, y0 = max(ix, 0), max(iy, 0)
    x1, y1 = min(ix + cw + 1, geometry.width), min(iy + ch + 1, geometry.height)
    if x1 > x0 and y1 > y0:
        img[y0:y1, x0:x1] = s[y0 - iy : y1 - iy, x0 - ix : x1 - ix]
    return img


def _integrate(log_prev, log_next, residual, t_prev, t_next, contrast, x_off=0, y_off=0):
    delta = log_next - log_prev + residual
    n = np.floor(np.abs(delta) / contrast).astype(np.int64)
    new_residual = delta - np.sign(delta) * n * contrast

    flat_n = n.ravel()
    hot = np.flatnonzero(flat_n)
    counts = flat_n[hot]
    total = int(counts.sum())
    if total == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty, empty, new_residual
    pix = np.repeat(hot, counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    j = np.arange(total) - starts + 1  # 1..n within each pixel
    nn = np.repeat(counts, counts)
    dt = int(t_next) - int(t_prev)
    t = int(t_prev) + (j * dt + nn - 1) // nn  # ceil(j * dt / n)
    y, x = np.divmod(pix, delta.shape[1])
    p = (delta.ravel()[pix] > 0).astype(np.int64)
    order = np.lexsort((x, y, t))
    return t[order], x[order] + x_off, y[order] + y_off, p[order], new_residual


def log_intensity(image) -> np.ndarray:
    return np.log(np.maximum(np.asarray(image, dtype=np.float64), 1.0))


def simulate_dvs(i_prev, i_next, t_prev: int, t_next: int, contrast: float, residual=None):
    """Ideal threshold integrator between two intensity images.

    Per pixel, ``delta = log(i_next) - log(i_prev) + residual`` (intensities
    floored at 1) fires ``floor(|delta| / contrast)`` events of the sign of
    delta, stamped evenly in (t_prev, t_next]. Returns ``(t, x, y, p,
    new_residual)`` with events ordered by (t, y, x); ``new_residual`` keeps
    the sign of delta and is smaller than ``contrast`` in magnitude.
    """
    a = log_intensity(i_prev)
    b = log_intensity(i_next)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if residual is None:
        residual = np.zeros(a.shape)
    return _integrate(a, b, residual, t_prev, t_next, contrast)


def _noise_events(rng, rate_hz, geometry, t_prev, t_next):
    lam = rate_hz * (t_next - t_prev) * 1e-6 * geometry.width * geometry.height
    k = int(rng.poisson(lam))
    if k == 0:
        e = np.empty(0, dtype=np.int64)
        return e, e, e, e
    t = rng.integers(t_prev + 1, t_next + 1, size=k)
    x = rng.integers(0, geometry.width, size=k)
    y = rng.integers(0, geometry.height, size=k)
    p = rng.integers(0, 2, size=k)
    return t, x, y, p


def render_sequence(
    pattern: ScenePattern,
    motion: MotionSpec,
    geometry: SensorGeometry | None = None,
    seed: int = 0,
    name: str = "synthetic",
) -> SequenceRecording:
    geometry = geometry or SensorGeometry()
    rng = np.random.default_rng(seed)
    canvas, (ex0, ey0, ex1, ey1) = draw_canvas(pattern, rng)
    ch, cw = canvas.shape
    if pattern.position is not None:
        px0, py0 = pattern.position
    else:
        px0, py0 = (geometry.width - cw) / 2, (geometry.height - ch) / 2
    vx, vy = motion.velocity

    def origin(t_us):
        s = t_us * 1e-6
        return px0 + vx * s, py0 + vy * s

    def render(t_us):
        ox, oy = origin(t_us)
        return place(canvas, ox, oy, geometry, pattern.background)

    def footprint(t_us):
        ox, oy = origin(t_us)
        return math.floor(ox), math.floor(oy), math.floor(ox) + cw + 1, math.floor(oy) + ch + 1

    end_us = int(round(motion.duration_s * 1e6))
    steps = end_us // SUBSTEP_US
    log_prev = log_intensity(render(0))
    residual = np.zeros(geometry.shape)
    chunks = []
    for k in range(1, steps + 1):
        t0, t1 = (k - 1) * SUBSTEP_US, k * SUBSTEP_US
        log_cur = log_intensity(render(t1))
        # only pixels under the pattern in either render can change
        a, b = footprint(t0), footprint(t1)
        x0, y0 = max(min(a[0], b[0]), 0), max(min(a[1], b[1]), 0)
        x1, y1 = min(max(a[2], b[2]), geometry.width), min(max(a[3], b[3]), geometry.height)
        if x1 > x0 and y1 > y0:
            win = (slice(y0, y1), slice(x0, x1))
            t, x, y, p, res = _integrate(
                log_prev[win], log_cur[win], residual[win], t0, t1, motion.contrast_threshold, x0, y0
            )
            residual[win] = res
        else:
            t = x = y = p = np.empty(0, dtype=np.int64)
        if motion.noise_rate_hz > 0:
            nt, nx, ny, np_ = _noise_events(rng, motion.noise_rate_hz, geometry, t0, t1)
            if len(nt):
                t, x, y, p = (np.concatenate(c) for c in ((t, nt), (x, nx), (y, ny), (p, np_)))
                order = np.lexsort((x, y, t))
                t, x, y, p = t[order], x[order], y[order], p[order]
        if len(t):
            chunks.append((t, x, y, p))
        log_prev = log_cur
    if chunks:
        cols = [np.concatenate([c[i] for c in chunks]) for i in range(4)]
        events = EventStream(*cols, geometry=geometry)
    else:
        events = EventStream.empty(geometry)

    n_frames = int(math.floor(motion.duration_s * motion.frame_rate_hz)) + 1
    frames = []
    for j in range(n_frames):
        t = int(round(j * 1e6 / motion.frame_rate_hz))
        if t > end_us:
            break
        frames.append(Frame(t, np.clip(np.rint(render(t)), 0, 255).astype(np.uint8)))

    annotations = []
    if len(events):
        n_labels = int(math.floor(motion.duration_s * motion.label_rate_hz)) + 1
        seen = set()
        for j in range(n_labels):
            t_label = int(round(j * 1e6 / motion.label_rate_hz))
            i = int(np.searchsorted(events.t, t_label))
            cands = [c for c in (i - 1, i) if 0 <= c < len(events)]
            anchor_t = int(min((events.t[c] for c in cands), key=lambda v: (abs(v - t_label), v)))
            if anchor_t in seen:
                continue
            ox, oy = origin(anchor_t)
            x0 = max(ox + ex0, 0.0)
            y0 = max(oy + ey0, 0.0)
            x1 = min(ox + ex1, float(geometry.width))
            y1 = min(oy + ey1, float(geometry.height))
            if x1 - x0 <= 0 or y1 - y0 <= 0:
                continue
            seen.add(anchor_t)
            annotations.append(Annotation(anchor_t, pattern.class_id, xyxy_to_bbox(x0, y0, x1, y1)))
    return SequenceRecording(events, tuple(frames), tuple(annotations), name=name)


def render_scene(spec: SceneSpec) -> SequenceRecording:
    return render_sequence(spec.pattern, spec.motion, spec.geometry, spec.seed, spec.name)
