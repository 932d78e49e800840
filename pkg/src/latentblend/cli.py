"""Command-line interface: data generation, training, editing, evaluation."""

import dataclasses
import os
import sys

import click
import numpy as np
import yaml

from . import (autoencoder, classifier as classifier_mod, data, denoiser, editor,
               evalharness, images, pipeline, ranker, schedule)


def _fail(exc):
    raise click.ClickException(f"{type(exc).__name__}: {exc}")


def _echo_progress(line):
    click.echo(line, err=True)


def _load_train_config(cls, config_path, overrides):
    """Dataclass from optional YAML plus non-None flag overrides."""
    raw = {}
    if config_path:
        with open(config_path) as fh:
            raw = yaml.safe_load(fh) or {}
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    cfg = cls(**raw)
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    return cfg


@click.group()
def main():
    """Toy latent-space image editor."""


@main.command("gen-data")
@click.option("--count", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_gen_data(count, seed, out_dir):
    """Write a labeled scene corpus (PNGs + manifest.json)."""
    if count < 0:
        raise click.ClickException("count must be >= 0")
    try:
        manifest = data.write_corpus(out_dir, count, seed)
    except OSError as exc:
        _fail(exc)
    click.echo(f"wrote {count} scenes to {out_dir} ({manifest})")


@main.command("train")
@click.argument("component", type=click.Choice(["vae", "denoiser", "embedder", "classifier"]))
@click.option("--corpus", type=click.Path(exists=False), default=None,
              help="corpus dir (vae/denoiser)")
@click.option("--vae", "vae_path", type=click.Path(), default=None,
              help="trained VAE checkpoint (denoiser)")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--resume", "resume_path", type=click.Path(exists=True), default=None,
              help="continue training from a checkpoint with saved optimizer state")
def cmd_train(component, corpus, vae_path, out_path, config_path, epochs, seed, resume_path):
    """Train one model component and write its checkpoint."""
    overrides = {"epochs": epochs, "seed": seed}
    try:
        if component in ("vae", "denoiser"):
            if not corpus:
                raise ValueError(f"--corpus is required to train the {component}")
            imgs, metas, _ = data.load_corpus(corpus)

        if component == "vae":
            cfg = _load_train_config(autoencoder.VaeTrainConfig, config_path, overrides)
            resume = None
            if resume_path:
                model, adam, rng = autoencoder.load_vae(resume_path, with_train_state=True)
                done = model.meta.get("epochs_trained", 0)
                curves = {"train_loss": list(model.meta.get("train_loss", [])),
                          "holdout_mse": list(model.meta.get("holdout_mse", []))}
                resume = (model, adam, rng, done, curves)
            model, adam, rng, _ = autoencoder.train_vae(imgs, cfg, resume=resume,
                                                        progress=_echo_progress)
            autoencoder.save_vae(model, out_path, adam=adam, rng=rng)
            click.echo(f"holdout mse: {model.meta['final_holdout_mse']:.5f}")

        elif component == "denoiser":
            if not vae_path:
                raise ValueError("--vae is required to train the denoiser")
            vae = autoencoder.load_vae(vae_path)
            cfg = _load_train_config(denoiser.DenoiserTrainConfig, config_path, overrides)
            sched = schedule.default_schedule()
            labels = [m.label for m in metas]
            resume = None
            if resume_path:
                model, adam, rng = denoiser.load_denoiser(resume_path, with_train_state=True)
                done = len(model.meta.get("train_loss", []))
                curves = {"train_loss": list(model.meta.get("train_loss", [])),
                          "holdout_mse": list(model.meta.get("holdout_mse", []))}
                resume = (model, adam, rng, done, curves)
            model, adam, rng, curves = denoiser.train_denoiser(
                vae, imgs, labels, sched, cfg, resume=resume, progress=_echo_progress)
            denoiser.save_denoiser(model, out_path, adam=adam, rng=rng)
            click.echo(f"final holdout eps-mse: {curves['holdout_mse'][-1]:.5f}")

        elif component == "embedder":
            cfg = _load_train_config(ranker.EmbedderTrainConfig, config_path, overrides)
            model, curves = ranker.train_embedder(cfg, progress=_echo_progress)
            ranker.save_embedder(model, out_path)
            click.echo(f"holdout retrieval acc: {curves['holdout_acc'][-1]:.3f}")

        else:
            cfg = _load_train_config(classifier_mod.ClassifierTrainConfig, config_path, overrides)
            model, curves = classifier_mod.train_classifier(cfg, progress=_echo_progress)
            classifier_mod.save_classifier(model, out_path)
            click.echo(f"holdout acc: {curves['holdout_acc'][-1]:.3f}")
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(exc)
    click.echo(f"saved {component} checkpoint to {out_path}")


def _edit_options(fn):
    opts = [
        click.option("--models", "models_dir", type=click.Path(exists=True), required=True),
        click.option("--batch", type=int, default=4, show_default=True),
        click.option("--steps", type=int, default=50, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--guidance", type=float, default=3.0, show_default=True),
        click.option("--shrink/--no-shrink", default=True, show_default=True),
        click.option("--reconstruct", "reconstruct_mode",
                     type=click.Choice(["none", "stitch", "poisson", "latent", "weights"]),
                     default="none", show_default=True),
        click.option("--eta", type=float, default=0.0, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


_RECON_ALIAS = {"latent": "latent_opt", "weights": "weight_opt"}


def _build_edit_config(batch, steps, seed, guidance, shrink, reconstruct_mode, eta,
                       snapshot_stride=0):
    return editor.EditConfig(
        num_sampler_steps=steps, guidance_scale=guidance, batch_size=batch, seed=seed,
        use_progressive_shrinking=shrink,
        reconstruction_mode=_RECON_ALIAS.get(reconstruct_mode, reconstruct_mode),
        eta=eta, snapshot_stride=snapshot_stride)


@main.command("edit")
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--mask", "mask_path", type=click.Path(exists=True), required=True)
@click.option("--prompt", type=str, required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--snapshots", "snapshots_path", type=click.Path(), default=None,
              help="also write a process strip PNG for the best candidate")
@_edit_options
def cmd_edit(image_path, mask_path, prompt, out_dir, snapshots_path, models_dir,
             batch, steps, seed, guidance, shrink, reconstruct_mode, eta):
    """Run one blended edit; writes candidates ordered by rank."""
    try:
        bundle = pipeline.load_bundle(models_dir)
        x = images.load_png(image_path)
        m = images.load_mask_png(mask_path)
        cfg = _build_edit_config(batch, steps, seed, guidance, shrink, reconstruct_mode,
                                 eta, snapshot_stride=1 if snapshots_path else 0)
        candidates = pipeline.run_edit(bundle, x, m, prompt, cfg)
        os.makedirs(out_dir, exist_ok=True)
        for cand in candidates:
            path = os.path.join(out_dir, f"rank_{cand.rank:02d}.png")
            images.save_png(cand.image, path)
            click.echo(f"rank {cand.rank}: score={cand.score:+.4f} -> {path}")
        if snapshots_path:
            editor.visualize_process(candidates[0].snapshots, snapshots_path)
            click.echo(f"process strip -> {snapshots_path}")
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(exc)


@main.command("eval")
@click.option("--cases", "n_cases", type=int, default=20, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_edit_options
def cmd_eval(n_cases, out_dir, models_dir, batch, steps, seed, guidance, shrink,
             reconstruct_mode, eta):
    """Run the quantitative evaluation protocol and write report files."""
    try:
        bundle = pipeline.load_bundle(models_dir, need_classifier=True)
        cfg = _build_edit_config(batch, steps, 0, guidance, shrink, reconstruct_mode, eta)
        report = evalharness.run_eval(bundle, n_cases, cfg, seed=seed,
                                      progress=_echo_progress)
        json_path, csv_path = evalharness.write_report(report, out_dir)
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(exc)
    click.echo(f"batch precision:       {report.batch_precision:.4f}")
    click.echo(f"best-result precision: {report.best_result_precision:.4f}")
    click.echo(f"batch diversity:       {report.batch_diversity:.4f}")
    click.echo(f"report -> {json_path}, {csv_path}")


@main.command("recipe")
@click.option("--out", "models_dir", type=click.Path(), required=True)
@click.option("--force", is_flag=True, help="retrain even if checkpoints exist")
def cmd_recipe(models_dir, force):
    """Train all four model checkpoints with the pinned recipe (~75 min CPU)."""
    from . import recipe
    try:
        if force:
            recipe.train_all(models_dir, progress=_echo_progress)
        else:
            recipe.ensure_models(models_dir, progress=_echo_progress)
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(exc)
    click.echo(f"models ready in {models_dir}")


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--models", "models_dir", type=click.Path(), default=None)
@click.option("--data-dir", type=click.Path(), default=None)
@click.option("--port", type=int, default=None)
@click.option("--host", type=str, default=None)
def cmd_serve(config_path, models_dir, data_dir, port, host):
    """Start the interactive editing HTTP service."""
    from . import service
    from .config import load_service_config
    try:
        cfg = load_service_config(config_path)
        if models_dir:
            cfg.models_dir = models_dir
        if data_dir:
            cfg.data_dir = data_dir
        if port:
            cfg.port = port
        if host:
            cfg.host = host
        import uvicorn
        uvicorn.run(service.create_app(cfg), host=cfg.host, port=cfg.port)
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
