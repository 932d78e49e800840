"""Batch ranking by prompt-image embedding similarity.

A contrastive toy embedder maps masked images and class labels into one
space; candidates are ordered by descending cosine similarity to the
prompt embedding, ties broken by original position. Only the masked area
participates (the image is zeroed outside the mask before embedding).
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import checkpoint, data, nn, training
from .classifier import augment_recognition_batch, softmax_xent
from .optim import Adam

F32 = np.float32


@dataclass
class EmbedderTrainConfig:
    epochs: int = 25
    batch_size: int = 64
    lr: float = 1.5e-3
    seed: int = 0
    n_scenes: int = 1800
    embed_dim: int = 32
    temperature: float = 10.0
    holdout_frac: float = 0.08


class _LabelTable:
    def __init__(self, count, dim, rng):
        self.table = (rng.standard_normal((count, dim)) * 0.5).astype(F32)

    @property
    def params(self):
        return {"table": self.table}


class EmbedderModel:
    """Image trunk + projection and a label embedding table, one shared space."""

    def __init__(self, init_seed: int = 0, embed_dim: int = 32,
                 temperature: float = 10.0, widths=(24, 48, 64, 64)):
        rng = np.random.default_rng(init_seed)
        self.trunk = nn.ConvEncoder(rng, widths)
        self.proj = nn.Dense(self.trunk.feat_dim, embed_dim, rng)
        self.labels = _LabelTable(len(data.LABELS), embed_dim, rng)
        self.embed_dim = embed_dim
        self.temperature = temperature
        self.widths = tuple(widths)
        self.meta = {}

    def named_layers(self):
        return self.trunk.named_layers("trunk") + [("proj", self.proj), ("labels", self.labels)]

    def flat_params(self):
        return nn.flatten_params(self.named_layers())

    # -- embedding ------------------------------------------------------------

    def embed_images_raw(self, x):
        """Unnormalized image embeddings (training/backprop path)."""
        feat, c_trunk = self.trunk.forward(np.asarray(x, dtype=F32))
        emb, c_proj = self.proj.forward(feat)
        return emb, (c_trunk, c_proj)

    def embed_images(self, x):
        emb, _ = self.embed_images_raw(x)
        out, _ = nn.normalize_rows(emb)
        return out

    def label_embeddings(self):
        out, _ = nn.normalize_rows(self.labels.table)
        return out

    def backward_images(self, demb, caches):
        c_trunk, c_proj = caches
        grads = {}
        dfeat, g = self.proj.backward(demb, c_proj)
        nn.merge_grads(grads, "proj", g)
        _, g = self.trunk.backward(dfeat, c_trunk)
        grads.update({f"trunk.{k}": v for k, v in g.items()})
        return grads

    # -- scoring ----------------------------------------------------------------

    def _masked(self, image, m):
        image = np.asarray(image, dtype=F32)
        m = np.asarray(m)
        if m.shape != image.shape[:2]:
            raise ValueError(f"mask shape {m.shape} does not match image {image.shape[:2]}")
        return image * m[:, :, None].astype(F32)

    def score(self, image, m, prompt):
        """Cosine similarity in [-1,1] between masked image and prompt label."""
        idx = data.label_index(prompt.label)  # KeyError for unknown/unconditional
        img_emb = self.embed_images(self._masked(image, m)[None])[0]
        return float(img_emb @ self.label_embeddings()[idx])

    def rank_batch(self, batch, m, prompt):
        """Descending-score permutation over the batch, stable on ties."""
        if len(batch) == 0:
            raise ValueError("cannot rank an empty batch")
        idx = data.label_index(prompt.label)
        masked = np.stack([self._masked(img, m) for img in batch])
        raw, _ = self.embed_images_raw(masked)
        return rank_embeddings(raw, self.label_embeddings()[idx])


def rank_embeddings(raw_image_embs, label_emb):
    """Order raw (unnormalized) image embeddings by cosine to label_emb.

    Split out so scale-invariance is directly testable: positive rescaling
    of the raw embeddings does not change the permutation.
    """
    embs, _ = nn.normalize_rows(np.asarray(raw_image_embs, dtype=F32))
    scores = embs @ np.asarray(label_emb, dtype=F32)
    order = np.argsort(-scores, kind="stable")
    return order, scores


# ---------------------------------------------------------------------------
# training

def train_embedder(cfg: EmbedderTrainConfig = None, progress=None):
    """Contrastive (image -> label) cross-entropy over cosine logits."""
    cfg = cfg or EmbedderTrainConfig()
    rng = np.random.default_rng(cfg.seed)
    size = data.IMG_SIZE

    imgs, metas = data.generate_corpus(cfg.n_scenes, cfg.seed + 1, size)
    labels = np.array([data.label_index(m.label) for m in metas], dtype=np.int64)
    bboxes = [m.bbox(size) for m in metas]

    model = EmbedderModel(init_seed=cfg.seed, embed_dim=cfg.embed_dim,
                          temperature=cfg.temperature)
    adam = Adam(model.flat_params(), lr=cfg.lr)
    split_rng = np.random.default_rng(cfg.seed + 3)
    train_idx, hold_idx = training.split_holdout(split_rng, len(imgs), cfg.holdout_frac)

    hold_rng = np.random.default_rng(cfg.seed + 4)
    hold_imgs = augment_recognition_batch(
        hold_rng, imgs[hold_idx], [bboxes[i] for i in hold_idx], mask_prob=1.0)
    hold_labels = labels[hold_idx]

    temp = F32(cfg.temperature)
    curves = {"train_loss": [], "holdout_acc": []}
    for epoch in range(cfg.epochs):
        losses = []
        for batch in training.minibatches(rng, train_idx, cfg.batch_size):
            x = augment_recognition_batch(rng, imgs[batch], [bboxes[i] for i in batch],
                                          mask_prob=0.8)
            raw, caches = model.embed_images_raw(x)
            img_n, c_imgn = nn.normalize_rows(raw)
            lbl_n, c_lbln = nn.normalize_rows(model.labels.table)
            logits = temp * (img_n @ lbl_n.T)
            loss, dlogits = softmax_xent(logits, labels[batch])
            training.check_finite(loss, f"embedder epoch {epoch}")
            losses.append(loss)
            dimg_n = temp * (dlogits @ lbl_n)
            dlbl_n = temp * (dlogits.T @ img_n)
            grads = model.backward_images(nn.normalize_rows_back(dimg_n, c_imgn), caches)
            grads["labels.table"] = nn.normalize_rows_back(dlbl_n, c_lbln)
            adam.step(grads)
        if len(hold_idx):
            order_scores = model.embed_images(hold_imgs) @ model.label_embeddings().T
            acc = float(np.mean(np.argmax(order_scores, axis=1) == hold_labels))
        else:
            acc = float("nan")
        curves["train_loss"].append(float(np.mean(losses)))
        curves["holdout_acc"].append(acc)
        if progress:
            progress(f"embedder epoch {epoch + 1}/{cfg.epochs} "
                     f"loss={curves['train_loss'][-1]:.4f} holdout_acc={acc:.3f}")

    model.meta = {"train_config": asdict(cfg), **curves}
    return model, curves


def save_embedder(model: EmbedderModel, path):
    header = {"widths": list(model.widths), "embed_dim": model.embed_dim,
              "temperature": model.temperature, "meta": model.meta}
    checkpoint.save_checkpoint(path, "embedder", header, model.flat_params())


def load_embedder(path):
    header, arrays = checkpoint.load_checkpoint(path, expect_kind="embedder")
    model = EmbedderModel(init_seed=0, embed_dim=header["embed_dim"],
                          temperature=header["temperature"], widths=tuple(header["widths"]))
    nn.load_flat_params(model.named_layers(), arrays)
    model.meta = header.get("meta", {})
    return model
