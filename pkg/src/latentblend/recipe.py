"""End-to-end CPU training recipe.

Trains the four model checkpoints (vae, denoiser, embedder, classifier)
with pinned hyperparameters into a models directory. Roughly 75 minutes
on one CPU core; everything is seeded, so two runs produce byte-identical
checkpoint files. A recipe.json marker records the parameters used, and
ensure_models() skips work when the directory already matches.
"""

import json
import os
from dataclasses import asdict

from . import autoencoder, classifier, data, denoiser, ranker, schedule
from .pipeline import CLASSIFIER_FILE, DENOISER_FILE, EMBEDDER_FILE, VAE_FILE

CORPUS_COUNT = 360
CORPUS_SEED = 0
# the denoiser needs many more scenes per class than the vae: prompt
# adherence hinges on per-class latent statistics that only stabilize
# with a couple hundred examples each
DENOISER_CORPUS_COUNT = 1800

_MARKER = "recipe.json"


def recipe_params() -> dict:
    params = {
        "corpus": {"count": CORPUS_COUNT, "seed": CORPUS_SEED},
        "denoiser_corpus": {"count": DENOISER_CORPUS_COUNT, "seed": CORPUS_SEED},
        "vae": asdict(autoencoder.VaeTrainConfig(epochs=25)),
        "denoiser": asdict(denoiser.DenoiserTrainConfig(epochs=120)),
        "embedder": asdict(ranker.EmbedderTrainConfig()),
        "classifier": asdict(classifier.ClassifierTrainConfig()),
        "schedule": {"num_train_steps": 1000, "beta_spec": "linear"},
    }
    # round-trip so the marker comparison is stable against containers
    # (tuples in configs load back from json as lists)
    return json.loads(json.dumps(params))


def _say(progress, msg):
    if progress is not None:
        progress(msg)


def train_all(models_dir, progress=None, skip_existing=False):
    """Train every checkpoint into models_dir and write the marker file."""
    os.makedirs(models_dir, exist_ok=True)
    params = recipe_params()
    vae_path = os.path.join(models_dir, VAE_FILE)
    den_path = os.path.join(models_dir, DENOISER_FILE)
    emb_path = os.path.join(models_dir, EMBEDDER_FILE)
    clf_path = os.path.join(models_dir, CLASSIFIER_FILE)

    need_vae = not (skip_existing and os.path.exists(vae_path))
    # the denoiser is trained against the vae's latent space, so a rebuilt
    # vae invalidates an existing denoiser checkpoint
    need_den = need_vae or not (skip_existing and os.path.exists(den_path))

    if need_vae:
        _say(progress, f"generating corpus ({CORPUS_COUNT} scenes)")
        imgs, _ = data.generate_corpus(CORPUS_COUNT, seed=CORPUS_SEED)
        _say(progress, "training vae")
        cfg = autoencoder.VaeTrainConfig(**params["vae"])
        vae, _, _, _ = autoencoder.train_vae(imgs, cfg, progress=progress)
        autoencoder.save_vae(vae, vae_path)
    else:
        vae = autoencoder.load_vae(vae_path)

    if need_den:
        _say(progress, f"generating denoiser corpus ({DENOISER_CORPUS_COUNT} scenes)")
        den_imgs, den_metas = data.generate_corpus(DENOISER_CORPUS_COUNT, seed=CORPUS_SEED)
        _say(progress, "training denoiser")
        cfg = denoiser.DenoiserTrainConfig(**params["denoiser"])
        sched = schedule.default_schedule()
        labels = [m.label for m in den_metas]
        den, _, _, _ = denoiser.train_denoiser(vae, den_imgs, labels, sched, cfg, progress=progress)
        denoiser.save_denoiser(den, den_path)

    if not (skip_existing and os.path.exists(emb_path)):
        _say(progress, "training embedder")
        emb, _ = ranker.train_embedder(ranker.EmbedderTrainConfig(**params["embedder"]),
                                       progress=progress)
        ranker.save_embedder(emb, emb_path)

    if not (skip_existing and os.path.exists(clf_path)):
        _say(progress, "training classifier")
        clf, _ = classifier.train_classifier(
            classifier.ClassifierTrainConfig(**params["classifier"]), progress=progress)
        classifier.save_classifier(clf, clf_path)

    with open(os.path.join(models_dir, _MARKER), "w") as fh:
        json.dump(params, fh, indent=2, sort_keys=True)


def ensure_models(models_dir, progress=None):
    """Train whatever is missing; no-op when the directory is up to date."""
    marker = os.path.join(models_dir, _MARKER)
    fresh = False
    if os.path.exists(marker):
        with open(marker) as fh:
            try:
                fresh = json.load(fh) == recipe_params()
            except ValueError:
                fresh = False
    if not fresh:
        # parameters changed: drop the marker so a partial directory is
        # never mistaken for a consistent one, then rebuild everything
        if os.path.exists(marker):
            os.unlink(marker)
        train_all(models_dir, progress=progress, skip_existing=False)
        return
    names = (VAE_FILE, DENOISER_FILE, EMBEDDER_FILE, CLASSIFIER_FILE)
    if all(os.path.exists(os.path.join(models_dir, n)) for n in names):
        return
    train_all(models_dir, progress=progress, skip_existing=True)
