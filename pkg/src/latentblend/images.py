"""Pixel-space conversions and PNG I/O.

Images live in memory as HxWx3 float32 arrays with values in [-1, 1];
8-bit RGB PNGs map linearly onto that range. Masks are HxW uint8 arrays
over {0, 1}; on disk they are 8-bit grayscale PNGs thresholded at >127.
"""

import io

import numpy as np
from PIL import Image


def to_uint8(img):
    """[-1,1] float image -> uint8 RGB, clamped."""
    arr = np.clip(np.asarray(img, dtype=np.float32), -1.0, 1.0)
    return np.round((arr + 1.0) * 127.5).astype(np.uint8)


def from_uint8(arr):
    """uint8 RGB -> [-1,1] float32."""
    return (np.asarray(arr, dtype=np.float32) / 127.5 - 1.0).astype(np.float32)


def encode_png(img) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes):
    with Image.open(io.BytesIO(data)) as im:
        rgb = im.convert("RGB")
        return from_uint8(np.asarray(rgb))


def save_png(img, path):
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_png(path):
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def encode_mask_png(mask) -> bytes:
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_mask_png(data: bytes):
    """Grayscale PNG -> binary mask; pixels > 127 count as inside."""
    with Image.open(io.BytesIO(data)) as im:
        gray = np.asarray(im.convert("L"))
    return (gray > 127).astype(np.uint8)


def save_mask_png(mask, path):
    with open(path, "wb") as fh:
        fh.write(encode_mask_png(mask))


def load_mask_png(path):
    with open(path, "rb") as fh:
        return decode_mask_png(fh.read())


def horizontal_strip(frames):
    """Concatenate equally sized [-1,1] images left to right."""
    if not frames:
        raise ValueError("no frames to concatenate")
    return np.concatenate([np.asarray(f, dtype=np.float32) for f in frames], axis=1)
