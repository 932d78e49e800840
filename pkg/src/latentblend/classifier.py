"""Evaluation classifier: 9 scene classes plus a reject class.

Trained on procedurally generated scenes, shape-free backgrounds and
noise, with masking/noise/blur augmentation so that it stays reliable on
decoded (slightly soft) generations and on images zeroed outside an edit
mask. Penultimate pooled features double as the perceptual space for the
diversity metric. Deliberately independent from the ranking embedder.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import checkpoint, data, nn, training
from .optim import Adam

F32 = np.float32

REJECT_CLASS = "background"


@dataclass
class ClassifierTrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1.5e-3
    seed: int = 0
    n_scenes: int = 1800
    n_negatives: int = 400
    holdout_frac: float = 0.08
    widths: tuple = (32, 64, 96, 128)


class ClassifierModel:
    """Conv trunk + linear head over LABELS + reject; read-only inference."""

    def __init__(self, init_seed: int = 0, widths=(24, 48, 64, 64)):
        rng = np.random.default_rng(init_seed)
        self.trunk = nn.ConvEncoder(rng, widths)
        self.head = nn.Dense(self.trunk.feat_dim, len(data.LABELS) + 1, rng)
        self.widths = tuple(widths)
        self.meta = {}

    @property
    def classes(self):
        return data.LABELS + (REJECT_CLASS,)

    @property
    def reject_index(self):
        return len(data.LABELS)

    def named_layers(self):
        return self.trunk.named_layers("trunk") + [("head", self.head)]

    def flat_params(self):
        return nn.flatten_params(self.named_layers())

    def forward(self, x):
        feat, c_trunk = self.trunk.forward(np.asarray(x, dtype=F32))
        logits, c_head = self.head.forward(feat)
        return logits, feat, (c_trunk, c_head)

    def backward(self, dlogits, caches):
        c_trunk, c_head = caches
        grads = {}
        dfeat, g = self.head.backward(dlogits, c_head)
        nn.merge_grads(grads, "head", g)
        _, g = self.trunk.backward(dfeat, c_trunk)
        grads.update({f"trunk.{k}": v for k, v in g.items()})
        return grads

    # -- inference ----------------------------------------------------------

    def _batched(self, x):
        x = np.asarray(x, dtype=F32)
        return (x[None], True) if x.ndim == 3 else (x, False)

    def predict(self, x):
        """(probabilities, argmax index) over the 10 classes."""
        x, single = self._batched(x)
        logits, _, _ = self.forward(x)
        probs = _softmax(logits)
        idx = np.argmax(probs, axis=1)
        if single:
            return probs[0], int(idx[0])
        return probs, idx

    def classify(self, x):
        x, single = self._batched(x)
        logits, _, _ = self.forward(x)
        idx = np.argmax(logits, axis=1)
        return int(idx[0]) if single else idx

    def features(self, x):
        """Unit-normalized pooled features; perceptual space for diversity."""
        x, single = self._batched(x)
        _, feat, _ = self.forward(x)
        out, _ = nn.normalize_rows(feat)
        return out[0] if single else out

    def is_valid_scene(self, x):
        """True where the image is recognized as some scene class."""
        idx = self.classify(x)
        return idx != self.reject_index


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, target_idx):
    """Mean cross-entropy and dlogits for integer targets."""
    p = _softmax(logits)
    n = len(target_idx)
    loss = float(-np.mean(np.log(p[np.arange(n), target_idx] + 1e-12)))
    d = p
    d[np.arange(n), target_idx] -= 1.0
    return loss, (d / n).astype(F32)


# ---------------------------------------------------------------------------
# training data synthesis

def _make_negatives(rng, count, size):
    """Backgrounds, uniform noise, and blurred noise: all map to reject."""
    out = np.empty((count, size, size, 3), dtype=F32)
    for i in range(count):
        kind = i % 3
        if kind == 0:
            out[i] = data.generate_background(rng, size)
        elif kind == 1:
            out[i] = rng.uniform(-1.0, 1.0, size=(size, size, 3)).astype(F32)
        else:
            noise = rng.uniform(-1.0, 1.0, size=(size, size, 3)).astype(F32)
            out[i] = data.box_blur3(noise)
    return out


def _random_rect(rng, size):
    x0, x1 = sorted(rng.integers(0, size + 1, size=2))
    y0, y1 = sorted(rng.integers(0, size + 1, size=2))
    return int(x0), int(y0), int(max(x1, x0 + 1)), int(max(y1, y0 + 1))


def augment_recognition_batch(rng, imgs, bboxes, mask_prob=0.6):
    """Masking (rect kept, rest zeroed), additive noise and blur.

    bboxes[i] is the region that must survive masking, or None for images
    with no protected region (negatives).
    """
    size = imgs.shape[1]
    out = imgs.copy()
    for i in range(len(out)):
        if rng.random() < mask_prob:
            bbox = bboxes[i]
            rect = data.random_containing_rect(rng, bbox, size) if bbox is not None \
                else _random_rect(rng, size)
            out[i] = data.apply_rect_mask(out[i], rect)
        if rng.random() < 0.3:
            out[i] = out[i] + rng.normal(0.0, rng.uniform(0.01, 0.06), out[i].shape).astype(F32)
        if rng.random() < 0.3:
            out[i] = data.box_blur3(out[i])
    return np.clip(out, -1.0, 1.0).astype(F32)


# ---------------------------------------------------------------------------
# training

def train_classifier(cfg: ClassifierTrainConfig = None, progress=None):
    """Self-contained: synthesizes its corpus from cfg.seed."""
    cfg = cfg or ClassifierTrainConfig()
    rng = np.random.default_rng(cfg.seed)
    size = data.IMG_SIZE

    imgs, metas = data.generate_corpus(cfg.n_scenes, cfg.seed + 1, size)
    labels = np.array([data.label_index(m.label) for m in metas], dtype=np.int64)
    bboxes = [m.bbox(size) for m in metas]
    negs = _make_negatives(np.random.default_rng(cfg.seed + 2), cfg.n_negatives, size)

    all_imgs = np.concatenate([imgs, negs], axis=0)
    all_labels = np.concatenate([labels, np.full(len(negs), len(data.LABELS), dtype=np.int64)])
    all_bboxes = bboxes + [None] * len(negs)

    model = ClassifierModel(init_seed=cfg.seed, widths=tuple(cfg.widths))
    adam = Adam(model.flat_params(), lr=cfg.lr)
    split_rng = np.random.default_rng(cfg.seed + 3)
    train_idx, hold_idx = training.split_holdout(split_rng, len(all_imgs), cfg.holdout_frac)

    # deployment-condition holdout: masked to a rect containing the shape
    hold_rng = np.random.default_rng(cfg.seed + 4)
    hold_imgs = augment_recognition_batch(
        hold_rng, all_imgs[hold_idx], [all_bboxes[i] for i in hold_idx], mask_prob=1.0)
    hold_labels = all_labels[hold_idx]

    curves = {"train_loss": [], "holdout_acc": []}
    for epoch in range(cfg.epochs):
        # cosine decay to ~5% of the base rate; the augmentation keeps the
        # batch objective noisy, so late epochs need small steps to settle
        adam.lr = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * epoch / max(1, cfg.epochs - 1))))
        losses = []
        for batch in training.minibatches(rng, train_idx, cfg.batch_size):
            x = augment_recognition_batch(rng, all_imgs[batch], [all_bboxes[i] for i in batch])
            logits, _, caches = model.forward(x)
            loss, dlogits = softmax_xent(logits, all_labels[batch])
            training.check_finite(loss, f"classifier epoch {epoch}")
            losses.append(loss)
            adam.step(model.backward(dlogits, caches))
        acc = float(np.mean(model.classify(hold_imgs) == hold_labels)) if len(hold_idx) else float("nan")
        curves["train_loss"].append(float(np.mean(losses)))
        curves["holdout_acc"].append(acc)
        if progress:
            progress(f"classifier epoch {epoch + 1}/{cfg.epochs} "
                     f"loss={curves['train_loss'][-1]:.4f} holdout_acc={acc:.3f}")

    model.meta = {"train_config": asdict(cfg), **{k: v for k, v in curves.items()}}
    return model, curves


def save_classifier(model: ClassifierModel, path):
    header = {"widths": list(model.widths), "meta": model.meta}
    checkpoint.save_checkpoint(path, "classifier", header, model.flat_params())


def load_classifier(path):
    header, arrays = checkpoint.load_checkpoint(path, expect_kind="classifier")
    model = ClassifierModel(init_seed=0, widths=tuple(header["widths"]))
    nn.load_flat_params(model.named_layers(), arrays)
    model.meta = header.get("meta", {})
    return model
