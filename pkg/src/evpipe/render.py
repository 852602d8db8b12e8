"""PNG renderings of sample bundles for visual inspection."""

from __future__ import annotations

import io
import math

import numpy as np
from PIL import Image

from evpipe.model import bbox_to_xyxy

BOX_COLOR = (255, 255, 255)


def box_pixel_extent(bbox, scale: int, width: int, height: int):
    """Inclusive pixel columns/rows (x0, y0, x1, y1) of a box outline at ``scale``, or None if off-image."""
    x0, y0, x1, y1 = bbox_to_xyxy(bbox)
    px0 = max(int(math.floor(x0 * scale)), 0)
    py0 = max(int(math.floor(y0 * scale)), 0)
    px1 = min(int(math.ceil(x1 * scale)) - 1, width - 1)
    py1 = min(int(math.ceil(y1 * scale)) - 1, height - 1)
    if px1 < px0 or py1 < py0:
        return None
    return px0, py0, px1, py1


def bundle_image(bundle, scale: int = 1) -> np.ndarray:
    """H x W x 3 uint8: positive counts in red, negative in green, boxes outlined."""
    hist = np.asarray(bundle.histogram.values)
    rgb = np.zeros(hist.shape[1:] + (3,), dtype=np.uint8)
    rgb[..., 0] = np.rint(np.clip(hist[0], 0, 1) * 255)
    rgb[..., 1] = np.rint(np.clip(hist[1], 0, 1) * 255)
    if scale != 1:
        rgb = rgb.repeat(scale, axis=0).repeat(scale, axis=1)
    h, w = rgb.shape[:2]
    for ann in bundle.annotations:
        ext = box_pixel_extent(ann.bbox, scale, w, h)
        if ext is None:
            continue
        x0, y0, x1, y1 = ext
        rgb[y0, x0 : x1 + 1] = BOX_COLOR
        rgb[y1, x0 : x1 + 1] = BOX_COLOR
        rgb[y0 : y1 + 1, x0] = BOX_COLOR
        rgb[y0 : y1 + 1, x1] = BOX_COLOR
    return rgb


def png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def render_bundle(bundle, out_path, scale: int = 1) -> None:
    with open(out_path, "wb") as fh:
        fh.write(png_bytes(bundle_image(bundle, scale)))
