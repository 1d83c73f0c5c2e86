"""Square context crops and bilinear resizing for the tracking protocol."""

from __future__ import annotations

import numpy as np

from ..head import BBox

TEMPLATE_CONTEXT = 2.0
SEARCH_CONTEXT = 4.0


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resampling, half-pixel-centered sampling grid."""
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    img = image if image.ndim == 3 else image[:, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out if image.ndim == 3 else out[:, :, 0]


def crop_square(frame: np.ndarray, center: tuple[float, float], side: float,
                out_side: int) -> tuple[np.ndarray, float, float, float]:
    """Crop a square of ``side`` pixels around ``center`` and resize.

    Out-of-frame area is filled with the frame's mean pixel value.
    Returns (crop, x0, y0, side) where (x0, y0) is the crop origin in
    frame pixels, for mapping predictions back.
    """
    h, w = frame.shape[:2]
    side = max(2.0, float(side))
    x0 = center[0] - side / 2.0
    y0 = center[1] - side / 2.0
    n = int(round(side))
    xi0, yi0 = int(np.floor(x0)), int(np.floor(y0))
    fill = frame.reshape(-1, frame.shape[2]).mean(axis=0)
    patch = np.empty((n, n, frame.shape[2]), dtype=frame.dtype)
    patch[:] = fill
    src_x0, src_y0 = max(0, xi0), max(0, yi0)
    src_x1, src_y1 = min(w, xi0 + n), min(h, yi0 + n)
    if src_x1 > src_x0 and src_y1 > src_y0:
        patch[src_y0 - yi0:src_y1 - yi0, src_x0 - xi0:src_x1 - xi0] = \
            frame[src_y0:src_y1, src_x0:src_x1]
    return resize_bilinear(patch, out_side, out_side), float(xi0), float(yi0), float(n)


def context_side(box: BBox, factor: float) -> float:
    """Square crop side from the box's geometric-mean extent."""
    return factor * float(np.sqrt(max(box.w, 1e-6) * max(box.h, 1e-6)))


def box_to_crop_coords(box: BBox, x0: float, y0: float, side: float) -> BBox:
    """Frame-pixel box -> normalized coordinates of a crop at (x0, y0)."""
    return BBox(cx=(box.cx - x0) / side, cy=(box.cy - y0) / side,
                w=box.w / side, h=box.h / side)


def box_to_frame_coords(box: BBox, x0: float, y0: float, side: float) -> BBox:
    """Normalized crop-coordinate box -> frame pixels."""
    return BBox(cx=x0 + box.cx * side, cy=y0 + box.cy * side,
                w=box.w * side, h=box.h * side)


def clamp_box(box: BBox, width: float, height: float) -> BBox:
    """Keep the center in frame and the extent positive and bounded."""
    w = min(max(box.w, 2.0), width)
    h = min(max(box.h, 2.0), height)
    return BBox(cx=min(max(box.cx, 0.0), width - 1.0),
                cy=min(max(box.cy, 0.0), height - 1.0), w=w, h=h)
