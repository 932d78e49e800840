"""End-to-end edit pipeline: blended generation, background repair, ranking.

A ModelBundle holds every trained artifact the pipeline needs. Bundles are
immutable after load and shared across jobs; everything here is read-only
with respect to them.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import autoencoder, classifier as classifier_mod, denoiser, editor, ranker, reconstruct, schedule

VAE_FILE = "vae.npz"
DENOISER_FILE = "denoiser.npz"
EMBEDDER_FILE = "embedder.npz"
CLASSIFIER_FILE = "classifier.npz"


@dataclass
class ModelBundle:
    vae: object
    den: object
    sched: object
    embedder: object = None
    clf: object = None

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValueError(f"model bundle is missing: {', '.join(missing)}")


def load_bundle(models_dir, need_embedder=True, need_classifier=False) -> ModelBundle:
    """Load trained checkpoints from one directory by conventional names."""
    def path_of(name):
        p = os.path.join(models_dir, name)
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing model checkpoint {p}")
        return p

    vae = autoencoder.load_vae(path_of(VAE_FILE))
    den = denoiser.load_denoiser(path_of(DENOISER_FILE))
    spec = den.schedule_spec
    sched = schedule.make_schedule(spec["num_train_steps"], 50, spec["beta_spec"])
    emb = ranker.load_embedder(path_of(EMBEDDER_FILE)) if need_embedder else None
    clf = classifier_mod.load_classifier(path_of(CLASSIFIER_FILE)) if need_classifier else None
    return ModelBundle(vae=vae, den=den, sched=sched, embedder=emb, clf=clf)


@dataclass
class Candidate:
    """One ranked pipeline output."""

    image: np.ndarray
    z0: np.ndarray
    score: float
    rank: int
    source_index: int  # position in the raw generation batch
    snapshots: list = field(default_factory=list)


def run_edit(bundle: ModelBundle, x, m, prompt_text: str, cfg: editor.EditConfig,
             recon_cfg: reconstruct.ReconstructionConfig = None) -> list:
    """Full pipeline for one request; returns candidates best-first."""
    bundle.require("vae", "den", "sched")
    prompt = denoiser.resolve_prompt(prompt_text)
    outputs = editor.blended_edit(bundle.vae, bundle.den, bundle.sched, x, m, prompt, cfg)
    repaired = [
        reconstruct.apply_mode(cfg.reconstruction_mode, bundle.vae, out.z0, x, out.image,
                               m, recon_cfg)
        for out in outputs
    ]
    if prompt.is_unconditional or bundle.embedder is None:
        order = np.arange(len(repaired))
        scores = np.zeros(len(repaired), dtype=np.float32)
    else:
        order, scores = bundle.embedder.rank_batch(repaired, m, prompt)
    return [
        Candidate(image=repaired[src], z0=outputs[src].z0, score=float(scores[src]),
                  rank=rank, source_index=int(src), snapshots=outputs[src].snapshots)
        for rank, src in enumerate(order)
    ]
