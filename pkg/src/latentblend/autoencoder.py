"""Perceptual-compression VAE: encoder E(x), decoder D(z), training loop.

The encoder downsamples 4x (two stride-2 convs), producing h x w x c
latents with h = H/4; the decoder mirrors it with nearest upsampling.
Latents handed to callers are rescaled to roughly unit variance using a
scale factor measured on the training corpus after training; decode
inverts the scaling, so callers never see it.
"""

import copy
from dataclasses import dataclass, asdict, field

import numpy as np

from . import checkpoint, nn, training
from .optim import Adam

F32 = np.float32


@dataclass
class VaeArch:
    img_size: int = 64
    factor: int = 4
    latent_channels: int = 4
    enc_width: int = 64
    dec_width: int = 64


@dataclass
class VaeTrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 2e-3
    kl_weight: float = 1e-3
    holdout_frac: float = 0.08
    seed: int = 0


class _Encoder:
    def __init__(self, arch: VaeArch, rng):
        w = arch.enc_width
        c = arch.latent_channels
        self.layers = [
            ("conv1", nn.Conv2d(3, w // 2, 3, rng)),
            ("conv2", nn.Conv2d(w // 2, w, 3, rng, stride=2)),
            ("conv3", nn.Conv2d(w, w, 3, rng)),
            ("conv4", nn.Conv2d(w, w, 3, rng, stride=2)),
            ("conv5", nn.Conv2d(w, w, 3, rng)),
            ("head", nn.Conv2d(w, 2 * c, 3, rng)),
        ]
        self.by_name = dict(self.layers)

    def forward(self, x):
        caches = {}
        h = x
        for name, layer in self.layers[:-1]:
            h, caches[name] = layer.forward(h)
            h, caches[name + ".act"] = nn.silu(h)
        out, caches["head"] = self.by_name["head"].forward(h)
        c = out.shape[-1] // 2
        return out[..., :c], out[..., c:], caches

    def backward(self, dmu, dlogvar, caches):
        grads = {}
        dh, g = self.by_name["head"].backward(np.concatenate([dmu, dlogvar], axis=-1), caches["head"])
        nn.merge_grads(grads, "head", g)
        for name, layer in reversed(self.layers[:-1]):
            dh = nn.silu_back(dh, caches[name + ".act"])
            dh, g = layer.backward(dh, caches[name])
            nn.merge_grads(grads, name, g)
        return grads


class _Decoder:
    def __init__(self, arch: VaeArch, rng):
        w = arch.dec_width
        c = arch.latent_channels
        self.layers = [
            ("conv1", nn.Conv2d(c, w, 3, rng)),
            ("conv2", nn.Conv2d(w, w, 3, rng)),
            ("up1", None),
            ("conv3", nn.Conv2d(w, 3 * w // 4, 3, rng)),
            ("conv4", nn.Conv2d(3 * w // 4, 3 * w // 4, 3, rng)),
            ("up2", None),
            ("conv5", nn.Conv2d(3 * w // 4, w // 2, 3, rng)),
            ("head", nn.Conv2d(w // 2, 3, 3, rng)),
        ]
        self.by_name = {n: l for n, l in self.layers if l is not None}

    def forward(self, z):
        caches = {}
        h = z
        for name, layer in self.layers[:-1]:
            if layer is None:
                h, caches[name] = nn.upsample2(h)
            else:
                h, caches[name] = layer.forward(h)
                h, caches[name + ".act"] = nn.silu(h)
        out, caches["head"] = self.by_name["head"].forward(h)
        y, caches["tanh"] = nn.tanh(out)
        return y, caches

    def backward(self, dout, caches):
        grads = {}
        dh = nn.tanh_back(dout, caches["tanh"])
        dh, g = self.by_name["head"].backward(dh, caches["head"])
        nn.merge_grads(grads, "head", g)
        for name, layer in reversed(self.layers[:-1]):
            if layer is None:
                dh = nn.upsample2_back(dh, caches[name])
            else:
                dh = nn.silu_back(dh, caches[name + ".act"])
                dh, g = layer.backward(dh, caches[name])
                nn.merge_grads(grads, name, g)
        return dh, grads


class VaeModel:
    """Encoder/decoder pair; immutable after training, safe for concurrent reads."""

    def __init__(self, arch: VaeArch = None, init_seed: int = 0):
        self.arch = arch or VaeArch()
        rng = np.random.default_rng(init_seed)
        self.encoder = _Encoder(self.arch, rng)
        self.decoder = _Decoder(self.arch, rng)
        self.latent_scale = 1.0
        self.latent_shift = np.zeros(self.arch.latent_channels, dtype=F32)
        self.meta = {}

    # -- parameter plumbing ---------------------------------------------

    def named_layers(self):
        enc = [(f"enc.{n}", l) for n, l in self.encoder.layers if l is not None]
        dec = [(f"dec.{n}", l) for n, l in self.decoder.layers if l is not None]
        return enc + dec

    def flat_params(self):
        return nn.flatten_params(self.named_layers())

    @property
    def factor(self):
        return self.arch.factor

    @property
    def latent_shape(self):
        s = self.arch.img_size // self.arch.factor
        return (s, s, self.arch.latent_channels)

    # -- operations -------------------------------------------------------

    def _check_image(self, x):
        x = np.asarray(x, dtype=F32)
        single = x.ndim == 3
        if single:
            x = x[None]
        expect = (self.arch.img_size, self.arch.img_size, 3)
        if x.shape[1:] != expect:
            raise ValueError(f"image shape {x.shape[1:]} does not match model resolution {expect}")
        return x, single

    def encode_params(self, x):
        """Posterior (mu, logvar) in raw (unscaled) latent space."""
        x, single = self._check_image(x)
        mu, logvar, _ = self.encoder.forward(x)
        if single:
            return mu[0], logvar[0]
        return mu, logvar

    def encode(self, x, seed=None):
        """Posterior mean (seed absent) or seeded posterior sample, centered
        and rescaled to the calibrated latent distribution."""
        mu, logvar = self.encode_params(x)
        if seed is not None:
            eps = np.random.default_rng(seed).standard_normal(mu.shape, dtype=F32)
            mu = mu + np.exp(0.5 * logvar) * eps
        return ((mu - self.latent_shift) * F32(self.latent_scale)).astype(F32)

    def _check_latent(self, z):
        z = np.asarray(z, dtype=F32)
        single = z.ndim == 3
        if single:
            z = z[None]
        if z.shape[1:] != self.latent_shape:
            raise ValueError(f"latent shape {z.shape[1:]} does not match model {self.latent_shape}")
        return z, single

    def to_raw_latent(self, z):
        """Invert the calibration: public latent -> decoder input space."""
        return (z / F32(self.latent_scale) + self.latent_shift).astype(F32)

    def decode(self, z):
        z, single = self._check_latent(z)
        y, _ = self.decoder.forward(self.to_raw_latent(z))
        y = np.clip(y, -1.0, 1.0).astype(F32)
        return y[0] if single else y

    def decode_with_cache(self, z):
        """Forward pass keeping caches; used by the latent/weight optimizers."""
        z, single = self._check_latent(z)
        y, caches = self.decoder.forward(self.to_raw_latent(z))
        return (y[0] if single else y), caches, single

    def reconstruction_mse(self, x):
        """Mean-mode round-trip MSE per image, averaged.

        Bypasses latent_scale (it cancels exactly in the raw pass), so the
        value is independent of when the scale was calibrated.
        """
        x, _ = self._check_image(x)
        mu, _, _ = self.encoder.forward(x)
        rec, _ = self.decoder.forward(mu)
        rec = np.clip(rec, -1.0, 1.0)
        return float(np.mean((rec - x) ** 2))


# ---------------------------------------------------------------------------
# training

def _vae_epoch(model, imgs, train_idx, cfg, rng, adam):
    losses = []
    for batch in training.minibatches(rng, train_idx, cfg.batch_size):
        x = imgs[batch]
        mu, logvar, enc_caches = model.encoder.forward(x)
        eps = rng.standard_normal(mu.shape, dtype=F32)
        std = np.exp(0.5 * logvar)
        z = mu + std * eps
        xhat, dec_caches = model.decoder.forward(z)

        m_rec = xhat.size
        m_kl = mu.size
        recon = float(np.mean((xhat - x) ** 2))
        kl = float(-0.5 * np.mean(1.0 + logvar - mu**2 - np.exp(logvar)))
        loss = recon + cfg.kl_weight * kl
        training.check_finite(loss, f"vae step (recon={recon:.4g}, kl={kl:.4g})")
        losses.append(loss)

        dxhat = (2.0 / m_rec) * (xhat - x)
        dz, dec_grads = model.decoder.backward(dxhat, dec_caches)
        klw = F32(cfg.kl_weight)
        dmu = dz + klw * mu / F32(m_kl)
        dlogvar = dz * eps * (0.5 * std) + klw * (-0.5 / m_kl) * (1.0 - np.exp(logvar))
        enc_grads = model.encoder.backward(dmu.astype(F32), dlogvar.astype(F32), enc_caches)

        grads = {f"dec.{k}": v for k, v in dec_grads.items()}
        grads.update({f"enc.{k}": v for k, v in enc_grads.items()})
        adam.step(grads)
    return float(np.mean(losses)) if losses else float("nan")


def train_vae(corpus_images, cfg: VaeTrainConfig = None, arch: VaeArch = None,
              resume=None, progress=None):
    """Train on (N,H,W,3) images in [-1,1]; deterministic given cfg.seed."""
    cfg = cfg or VaeTrainConfig()
    imgs = np.asarray(corpus_images, dtype=F32)
    if imgs.ndim != 4 or imgs.shape[0] == 0:
        raise ValueError("corpus must be a nonempty (N,H,W,3) array")

    if resume is not None:
        model, adam, rng, start_epoch, curves = resume
    else:
        model = VaeModel(arch or VaeArch(img_size=imgs.shape[1]), init_seed=cfg.seed)
        adam = Adam(model.flat_params(), lr=cfg.lr)
        rng = np.random.default_rng(cfg.seed)
        start_epoch = 0
        curves = {"train_loss": [], "holdout_mse": []}

    split_rng = np.random.default_rng(cfg.seed + 1)
    train_idx, hold_idx = training.split_holdout(split_rng, len(imgs), cfg.holdout_frac)

    for epoch in range(start_epoch, cfg.epochs):
        loss = _vae_epoch(model, imgs, train_idx, cfg, rng, adam)
        hold_mse = model.reconstruction_mse(imgs[hold_idx]) if len(hold_idx) else float("nan")
        curves["train_loss"].append(loss)
        curves["holdout_mse"].append(hold_mse)
        if progress:
            progress(f"vae epoch {epoch + 1}/{cfg.epochs} loss={loss:.5f} holdout_mse={hold_mse:.5f}")

    # center each channel and rescale to unit-ish variance for the diffusion
    # stage; uncentered channel means otherwise force the eps predictor to
    # carry a bias that 1/sqrt(alpha_bar) amplifies at high noise levels
    if cfg.epochs > start_epoch or resume is None:
        mu, _ = model.encode_params(imgs[train_idx[:256]])
        shift = mu.mean(axis=(0, 1, 2)).astype(F32)
        std = float(np.std(mu - shift))
        model.latent_shift = shift
        model.latent_scale = 1.0 / std if std > 1e-6 else 1.0

    model.meta = {
        "train_config": asdict(cfg),
        "epochs_trained": cfg.epochs,
        "train_loss": curves["train_loss"],
        "holdout_mse": curves["holdout_mse"],
        "final_holdout_mse": curves["holdout_mse"][-1] if curves["holdout_mse"] else None,
    }
    return model, adam, rng, curves


# ---------------------------------------------------------------------------
# persistence

def save_vae(model: VaeModel, path, adam=None, rng=None):
    header = {
        "arch": asdict(model.arch),
        "latent_scale": model.latent_scale,
        "latent_shift": [float(v) for v in model.latent_shift],
        "meta": model.meta,
    }
    arrays = dict(model.flat_params())
    if adam is not None and rng is not None:
        header["rng_state"] = training.rng_state(rng)
        header["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps}
        for k, v in adam.state_dict().items():
            arrays[f"opt.{k}"] = v
    checkpoint.save_checkpoint(path, "vae", header, arrays)


def load_vae(path, with_train_state=False):
    header, arrays = checkpoint.load_checkpoint(path, expect_kind="vae")
    model = VaeModel(VaeArch(**header["arch"]), init_seed=0)
    nn.load_flat_params(model.named_layers(), arrays)
    model.latent_scale = header["latent_scale"]
    model.latent_shift = np.asarray(header["latent_shift"], dtype=F32)
    model.meta = header.get("meta", {})
    if not with_train_state:
        return model
    if "rng_state" not in header:
        raise ValueError(f"{path}: checkpoint has no training state to resume from")
    opt_cfg = header["adam"]
    adam = Adam(model.flat_params(), **opt_cfg)
    adam.load_state_dict({k[len("opt."):]: v for k, v in arrays.items() if k.startswith("opt.")})
    rng = training.rng_from_state(header["rng_state"])
    return model, adam, rng


def clone_decoder(model: VaeModel):
    """Private decoder copy for per-image weight optimization."""
    return copy.deepcopy(model.decoder)
