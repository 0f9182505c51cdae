"""Image file I/O: 8-bit PNG for color/masks, 16-bit PNG/PGM for depth and
weight maps. Internally everything is float64; color images live in [0, 1].
Depth files store integer millimeters by default (scale recorded in the
scene JSON)."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import ValidationError

DEPTH_SCALE_M = 0.001  # meters per stored 16-bit unit


def write_png(path, image):
    """Write a float [0,1] image ((H,W,3) color or (H,W) gray) as 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def read_png(path):
    """Read an image file as float64 in [0,1]; color files return (H,W,3)."""
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B"):
            return np.asarray(im, dtype=np.float64) / 65535.0
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_mask_png(path, mask):
    write_png(path, np.asarray(mask, dtype=np.float64))


def read_mask_png(path):
    return read_png(path) > 0.5


def write_depth(path, depth_m, scale=DEPTH_SCALE_M):
    """Write a metric depth map as 16-bit grayscale PNG (depth/scale units)."""
    d = np.asarray(depth_m, dtype=np.float64) / scale
    if np.any(d < 0):
        raise ValidationError("depth must be non-negative")
    data = np.clip(np.rint(d), 0, 65535).astype(np.uint16)
    Image.fromarray(data, mode="I;16").save(path, format="PNG")


def read_depth(path, scale=DEPTH_SCALE_M):
    """Read a 16-bit PNG or PGM depth map back to meters."""
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"depth file must be single-channel, got {arr.shape}")
    return arr * scale


def write_pgm(path, values, max_out=65535):
    """Write a scalar map as a 16-bit binary PGM, scaled to its maximum."""
    arr = np.asarray(values, dtype=np.float64)
    top = arr.max()
    scaled = np.zeros_like(arr) if top <= 0 else arr / top * max_out
    data = np.clip(np.rint(scaled), 0, max_out).astype(">u2")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{max_out}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + data.tobytes())
