"""Grayscale frame preprocessing: CLAHE, unit scaling, letterboxing, patch crops."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import cv2
import numpy as np

from evpipe.errors import DegenerateBox
from evpipe.model import Annotation, Frame, bbox_to_xyxy

PATCH_SIZES = (32, 64, 128, 224)
FRAME_PAD = 114
HIST_PAD = 0


@dataclass(frozen=True)
class PrepConfig:
    clahe_tiles: tuple[int, int] = (8, 8)
    clahe_clip_limit: float = 2.0
    target_size: int = 640
    pad_value: int = FRAME_PAD

    def __post_init__(self):
        object.__setattr__(self, "clahe_tiles", tuple(int(v) for v in self.clahe_tiles))
        if len(self.clahe_tiles) != 2 or min(self.clahe_tiles) < 1:
            raise ValueError(f"clahe_tiles must be two integers >= 1, got {self.clahe_tiles}")
        if self.clahe_clip_limit < 1.0:
            raise ValueError(f"clahe_clip_limit must be >= 1.0, got {self.clahe_clip_limit}")
        if self.target_size < 32:
            raise ValueError(f"target_size must be >= 32, got {self.target_size}")

    @classmethod
    def from_dict(cls, doc: dict) -> "PrepConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown prep keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clahe_tiles"] = list(self.clahe_tiles)
        return d


def _tile_luts(src: np.ndarray, tiles_x: int, tiles_y: int, clip_limit: float):
    h, w = src.shape
    if w % tiles_x == 0 and h % tiles_y == 0:
        ext = src
    else:
        # both axes get padded once either is indivisible (matches the reference filter)
        ext = cv2.copyMakeBorder(
            src, 0, tiles_y - h % tiles_y, 0, tiles_x - w % tiles_x, cv2.BORDER_REFLECT_101
        )
    th, tw = ext.shape[0] // tiles_y, ext.shape[1] // tiles_x
    area = th * tw
    limit = max(int(clip_limit * area / 256), 1) if clip_limit > 0 else 0
    scale = np.float32(255.0) / np.float32(area)

    blocks = ext[: th * tiles_y, : tw * tiles_x].reshape(tiles_y, th, tiles_x, tw).transpose(0, 2, 1, 3)
    luts = np.empty((tiles_y, tiles_x, 256), dtype=np.uint8)
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            hist = np.bincount(blocks[ty, tx].ravel(), minlength=256).astype(np.int64)
            if limit > 0:
                excess = int(np.maximum(hist - limit, 0).sum())
                np.minimum(hist, limit, out=hist)
                batch, residual = divmod(excess, 256)
                hist += batch
                if residual:
                    step = max(256 // residual, 1)
                    hist[np.arange(0, 256, step)[:residual]] += 1
            cdf = np.cumsum(hist).astype(np.float32) * scale
            luts[ty, tx] = np.clip(np.rint(cdf), 0, 255).astype(np.uint8)
    return luts, th, tw


def _axis_weights(size: int, tile: int, tiles: int):
    pos = np.arange(size, dtype=np.float32) * (np.float32(1.0) / np.float32(tile)) - np.float32(0.5)
    lo = np.floor(pos).astype(np.int64)
    frac = (pos - lo).astype(np.float32)
    hi = np.minimum(lo + 1, tiles - 1)
    lo = np.maximum(lo, 0)
    return lo, hi, frac


def clahe_array(pixels: np.ndarray, tiles=(8, 8), clip_limit: float = 2.0) -> np.ndarray:
    """Contrast-limited adaptive histogram equalisation of a uint8 image.

    Per-tile histograms are clipped at ``clip_limit`` times the uniform bin
    height, the excess is spread evenly, and the per-tile CDF maps are blended
    bilinearly between tile centres. ``tiles`` is (tiles_x, tiles_y).
    """
    src = np.asarray(pixels)
    if src.dtype != np.uint8 or src.ndim != 2:
        raise ValueError("clahe expects a 2-D uint8 image")
    tiles_x, tiles_y = tiles
    luts, th, tw = _tile_luts(src, tiles_x, tiles_y, clip_limit)
    h, w = src.shape
    x1, x2, xa = _axis_weights(w, tw, tiles_x)
    y1, y2, ya = _axis_weights(h, th, tiles_y)
    xa1 = np.float32(1.0) - xa
    ya1 = np.float32(1.0) - ya

    v = src.astype(np.int64)
    f = np.float32
    l11 = luts[y1[:, None], x1[None, :], v].astype(f)
    l12 = luts[y1[:, None], x2[None, :], v].astype(f)
    l21 = luts[y2[:, None], x1[None, :], v].astype(f)
    l22 = luts[y2[:, None], x2[None, :], v].astype(f)
    top = l11 * xa1[None, :] + l12 * xa[None, :]
    bottom = l21 * xa1[None, :] + l22 * xa[None, :]
    res = top * ya1[:, None] + bottom * ya[:, None]
    return np.clip(np.rint(res), 0, 255).astype(np.uint8)


def clahe(frame: Frame, cfg: PrepConfig | None = None) -> Frame:
    cfg = cfg or PrepConfig()
    return Frame(frame.t, clahe_array(frame.pixels, cfg.clahe_tiles, cfg.clahe_clip_limit))


def normalize_unit(image) -> np.ndarray:
    """uint8 intensities -> float64 in [0, 1]."""
    px = image.pixels if isinstance(image, Frame) else np.asarray(image)
    return px.astype(np.float64) / 255.0


@dataclass(frozen=True)
class LetterboxTransform:
    scale: float
    pad_x: int
    pad_y: int
    size: int

    def forward(self, x, y):
        return x * self.scale + self.pad_x, y * self.scale + self.pad_y

    def inverse(self, x, y):
        return (x - self.pad_x) / self.scale, (y - self.pad_y) / self.scale

    def forward_bbox(self, bbox):
        bx, by, w, h = bbox
        x, y = self.forward(bx, by)
        return (x, y, w * self.scale, h * self.scale)

    def inverse_bbox(self, bbox):
        bx, by, w, h = bbox
        x, y = self.inverse(bx, by)
        return (x, y, w / self.scale, h / self.scale)


def _resize(image: np.ndarray, width: int, height: int) -> np.ndarray:
    if image.ndim == 3:
        # channel-first in, channel-first out
        out = cv2.resize(np.ascontiguousarray(image.transpose(1, 2, 0)), (width, height), interpolation=cv2.INTER_LINEAR)
        if out.ndim == 2:
            out = out[:, :, None]
        return out.transpose(2, 0, 1)
    return cv2.resize(image, (width, height), interpolation=cv2.INTER_LINEAR)


def letterbox(image, target_size: int = 640, pad_value=FRAME_PAD):
    """Aspect-preserving bilinear resize, centred on a square canvas.

    Accepts (H, W) or channel-first (C, H, W) arrays. Returns the padded
    image and the :class:`LetterboxTransform` mapping source to target
    pixel coordinates. The odd pad pixel goes to the bottom/right.
    """
    img = np.asarray(image)
    h, w = img.shape[-2:]
    scale = target_size / max(w, h)
    new_w = min(target_size, int(round(w * scale)))
    new_h = min(target_size, int(round(h * scale)))
    resized = _resize(img, new_w, new_h) if (new_w, new_h) != (w, h) else img.copy()
    pad_x = (target_size - new_w) // 2
    pad_y = (target_size - new_h) // 2
    out = np.full(img.shape[:-2] + (target_size, target_size), pad_value, dtype=img.dtype)
    out[..., pad_y : pad_y + new_h, pad_x : pad_x + new_w] = resized
    return out, LetterboxTransform(scale, pad_x, pad_y, target_size)


def crop_patch(image, ann: Annotation, out_size: int = 64) -> np.ndarray:
    """Crop the annotation box (clipped to the image) and resize it to out_size^2."""
    if out_size not in PATCH_SIZES:
        raise ValueError(f"out_size must be one of {PATCH_SIZES}, got {out_size}")
    img = image.pixels if isinstance(image, Frame) else np.asarray(image)
    h, w = img.shape[-2:]
    x0, y0, x1, y1 = bbox_to_xyxy(ann.bbox)
    cx0, cy0 = max(x0, 0.0), max(y0, 0.0)
    cx1, cy1 = min(x1, float(w)), min(y1, float(h))
    if cx1 <= cx0 or cy1 <= cy0:
        raise DegenerateBox(f"box {ann.bbox} has no area inside the {w}x{h} image")
    ix0, iy0 = int(math.floor(cx0)), int(math.floor(cy0))
    ix1, iy1 = int(math.ceil(cx1)), int(math.ceil(cy1))
    patch = img[..., iy0:iy1, ix0:ix1]
    return _resize(np.ascontiguousarray(patch), out_size, out_size)
