"""Procedural toy corpus: textured backgrounds with one colored shape.

Each 64x64 scene carries a smooth multi-wave background plus a fine
texture component (so autoencoder reconstruction is measurably lossy) and
one anti-aliased shape whose color-shape pair is the class label. The
label string doubles as the guidance prompt.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import images

IMG_SIZE = 64

COLOR_VALUES = {
    "red": (0.85, -0.65, -0.65),
    "green": (-0.65, 0.80, -0.65),
    "blue": (-0.60, -0.60, 0.90),
}
SHAPE_NAMES = ("circle", "square", "triangle")
LABELS = tuple(f"{c}-{s}" for c in ("red", "green", "blue") for s in SHAPE_NAMES)

UNCONDITIONAL = "<unconditional>"


def vocabulary():
    return list(LABELS)


def label_index(label: str) -> int:
    try:
        return LABELS.index(label)
    except ValueError:
        raise KeyError(f"unknown label {label!r}; vocabulary: {', '.join(LABELS)}") from None


@dataclass
class SceneMeta:
    label: str
    shape: str
    color: str
    cx: float
    cy: float
    radius: float

    def bbox(self, size=IMG_SIZE):
        r = self.radius + 1.0
        x0 = max(0, int(np.floor(self.cx - r)))
        y0 = max(0, int(np.floor(self.cy - r)))
        x1 = min(size, int(np.ceil(self.cx + r)) + 1)
        y1 = min(size, int(np.ceil(self.cy + r)) + 1)
        return x0, y0, x1, y1

    def to_dict(self):
        return {"label": self.label, "shape": self.shape, "color": self.color,
                "cx": self.cx, "cy": self.cy, "radius": self.radius}


def _background(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    img = np.empty((size, size, 3), dtype=np.float32)
    base = rng.uniform(-0.35, 0.15, size=3)
    for ch in range(3):
        img[:, :, ch] = base[ch]
    # three broad waves and one fine texture wave
    wavelengths = [rng.uniform(24, 64), rng.uniform(24, 64), rng.uniform(12, 24), rng.uniform(4, 8)]
    amplitudes = [rng.uniform(0.05, 0.14), rng.uniform(0.05, 0.14),
                  rng.uniform(0.03, 0.08), rng.uniform(0.03, 0.07)]
    for lam, amp in zip(wavelengths, amplitudes):
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        proj = xx * np.cos(theta) + yy * np.sin(theta)
        wave = np.sin(2 * np.pi * proj / lam + phase).astype(np.float32)
        weights = rng.uniform(0.3, 1.0, size=3)
        img += amp * wave[:, :, None] * weights[None, None, :].astype(np.float32)
    return img


def _shape_alpha(meta: SceneMeta, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    dx = xx - meta.cx
    dy = yy - meta.cy
    r = meta.radius
    if meta.shape == "circle":
        dist = np.sqrt(dx * dx + dy * dy) - r
    elif meta.shape == "square":
        half = r * 0.9
        dist = np.maximum(np.abs(dx), np.abs(dy)) - half
    elif meta.shape == "triangle":
        # equilateral, apex up, circumradius r: intersect three half planes
        angles = np.array([np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3])
        vx, vy = r * np.cos(angles), -r * np.sin(angles)
        planes = []
        for i in range(3):
            j = (i + 1) % 3
            ex, ey = vx[j] - vx[i], vy[j] - vy[i]
            nx, ny = -ey, ex  # outward normal for this winding (y grows downward)
            norm = np.hypot(nx, ny)
            planes.append(((dx - vx[i]) * nx + (dy - vy[i]) * ny) / norm)
        dist = np.maximum.reduce(planes)
    else:
        raise ValueError(f"unknown shape {meta.shape!r}")
    return np.clip(0.5 - dist, 0.0, 1.0).astype(np.float32)


def random_containing_rect(rng, bbox, size):
    """Random axis-aligned rectangle that contains bbox, clipped to the image."""
    bx0, by0, bx1, by1 = bbox
    x0 = int(rng.integers(0, bx0 + 1))
    y0 = int(rng.integers(0, by0 + 1))
    x1 = int(rng.integers(bx1, size + 1))
    y1 = int(rng.integers(by1, size + 1))
    return x0, y0, x1, y1


def apply_rect_mask(img, rect):
    """Zero the image outside the rectangle (x0, y0, x1, y1)."""
    x0, y0, x1, y1 = rect
    out = np.zeros_like(img)
    out[y0:y1, x0:x1] = img[y0:y1, x0:x1]
    return out


def box_blur3(img):
    """3x3 box blur with edge replication; cheap down-grade augmentation."""
    return ndimage.uniform_filter(img, size=(3, 3, 1), mode="nearest")


def generate_background(rng, size=IMG_SIZE):
    """Shape-free background only; negative example for scene validity."""
    return np.clip(_background(rng, size), -1.0, 1.0).astype(np.float32)


def generate_scene(rng, label=None, size=IMG_SIZE):
    """One random scene; returns ([-1,1] float image, SceneMeta)."""
    if label is None:
        label = LABELS[int(rng.integers(len(LABELS)))]
    color, shape = label.rsplit("-", 1)
    radius = float(rng.uniform(8.0, 14.0))
    margin = radius + 2.0
    cx = float(rng.uniform(margin, size - margin))
    cy = float(rng.uniform(margin, size - margin))
    meta = SceneMeta(label=label, shape=shape, color=color, cx=cx, cy=cy, radius=radius)

    img = _background(rng, size)
    alpha = _shape_alpha(meta, size)[:, :, None]
    tint = np.asarray(COLOR_VALUES[color], dtype=np.float32)
    tint = tint + rng.uniform(-0.05, 0.05, size=3).astype(np.float32)
    img = img * (1.0 - alpha) + tint[None, None, :] * alpha
    return np.clip(img, -1.0, 1.0).astype(np.float32), meta


def generate_corpus(count, seed, size=IMG_SIZE):
    """In-memory corpus: (N,H,W,3) float images plus per-scene metadata."""
    rng = np.random.default_rng(seed)
    imgs = np.empty((count, size, size, 3), dtype=np.float32)
    metas = []
    for i in range(count):
        imgs[i], meta = generate_scene(rng, size=size)
        metas.append(meta)
    return imgs, metas


def write_corpus(out_dir, count, seed, size=IMG_SIZE):
    """Write labeled PNGs plus manifest.json; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    imgs, metas = generate_corpus(count, seed, size)
    items = []
    for i, meta in enumerate(metas):
        fname = f"scene_{i:05d}.png"
        images.save_png(imgs[i], os.path.join(out_dir, fname))
        items.append({"file": fname, **meta.to_dict()})
    manifest = {"seed": seed, "count": count, "size": size,
                "vocabulary": vocabulary(), "items": items}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def load_corpus(corpus_dir):
    """Read a written corpus back; PNG quantization applies."""
    path = os.path.join(corpus_dir, "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest.json in {corpus_dir}")
    with open(path) as fh:
        manifest = json.load(fh)
    size = manifest.get("size", IMG_SIZE)
    n = len(manifest["items"])
    imgs = np.empty((n, size, size, 3), dtype=np.float32)
    metas = []
    for i, item in enumerate(manifest["items"]):
        imgs[i] = images.load_png(os.path.join(corpus_dir, item["file"]))
        metas.append(SceneMeta(label=item["label"], shape=item["shape"], color=item["color"],
                               cx=item["cx"], cy=item["cy"], radius=item["radius"]))
    return imgs, metas, manifest
