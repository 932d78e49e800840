"""Shared fixtures.

Two tiers of trained models:

* tiny_* fixtures train throwaway models in seconds. They are bad at the
  task but exercise every interface; most tests use these.
* models_dir/bundle run the pinned full recipe (~30 min CPU) once and
  cache the checkpoints under artifacts/models at the repo root. Only the
  quality-sensitive acceptance tests depend on them.
"""

import os

import numpy as np
import pytest

from latentblend import (autoencoder, classifier, data, denoiser, pipeline, ranker,
                         recipe, schedule)

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ARTIFACTS_MODELS = os.path.join(REPO_ROOT, "artifacts", "models")


@pytest.fixture(scope="session")
def models_dir():
    recipe.ensure_models(ARTIFACTS_MODELS, progress=lambda s: print(f"[recipe] {s}", flush=True))
    return ARTIFACTS_MODELS


@pytest.fixture(scope="session")
def bundle(models_dir):
    return pipeline.load_bundle(models_dir, need_classifier=True)


@pytest.fixture(scope="session")
def tiny_corpus():
    return data.generate_corpus(12, seed=7)


@pytest.fixture(scope="session")
def tiny_vae(tiny_corpus):
    imgs, _ = tiny_corpus
    cfg = autoencoder.VaeTrainConfig(epochs=2, batch_size=4, seed=3)
    model, _, _, _ = autoencoder.train_vae(imgs, cfg)
    return model


@pytest.fixture(scope="session")
def tiny_denoiser(tiny_vae, tiny_corpus):
    imgs, metas = tiny_corpus
    cfg = denoiser.DenoiserTrainConfig(epochs=2, batch_size=6, seed=3,
                                       width=32, mid_width=48)
    sched = schedule.default_schedule()
    model, _, _, _ = denoiser.train_denoiser(tiny_vae, imgs, [m.label for m in metas],
                                          sched, cfg)
    return model


@pytest.fixture(scope="session")
def tiny_embedder():
    cfg = ranker.EmbedderTrainConfig(epochs=2, batch_size=16, seed=3, n_scenes=48)
    model, _ = ranker.train_embedder(cfg)
    return model


@pytest.fixture(scope="session")
def tiny_classifier():
    cfg = classifier.ClassifierTrainConfig(epochs=2, batch_size=16, seed=3,
                                           n_scenes=48, n_negatives=18)
    model, _ = classifier.train_classifier(cfg)
    return model


@pytest.fixture(scope="session")
def tiny_models_dir(tmp_path_factory, tiny_vae, tiny_denoiser, tiny_embedder,
                    tiny_classifier):
    d = tmp_path_factory.mktemp("tiny-models")
    autoencoder.save_vae(tiny_vae, d / pipeline.VAE_FILE)
    denoiser.save_denoiser(tiny_denoiser, d / pipeline.DENOISER_FILE)
    ranker.save_embedder(tiny_embedder, d / pipeline.EMBEDDER_FILE)
    classifier.save_classifier(tiny_classifier, d / pipeline.CLASSIFIER_FILE)
    return str(d)


@pytest.fixture(scope="session")
def tiny_bundle(tiny_models_dir):
    return pipeline.load_bundle(tiny_models_dir, need_classifier=True)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def rect_mask(h, w, top, left, height, width):
    m = np.zeros((h, w), dtype=np.uint8)
    m[top:top + height, left:left + width] = 1
    return m
