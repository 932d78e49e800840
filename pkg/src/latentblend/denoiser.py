"""Conditional noise-prediction network and its training loop.

A small UNet over latents with sinusoidal timestep embeddings and a
class-label embedding table standing in for a text encoder (the toy
vocabulary makes label == prompt). Classifier-free guidance combines the
conditional and unconditional branches at inference.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import checkpoint, data, nn, training
from .optim import Adam

F32 = np.float32


@dataclass(frozen=True)
class Prompt:
    """A guiding prompt: resolved vocabulary label plus the raw string."""

    label: str
    raw_text: str = ""

    @property
    def is_unconditional(self):
        return self.label == data.UNCONDITIONAL


def resolve_prompt(text: str) -> Prompt:
    """Normalize free text to a vocabulary label; '' means unconditional."""
    raw = text
    norm = text.strip().lower().replace(" ", "-").replace("_", "-")
    if norm in ("", data.UNCONDITIONAL, "unconditional", "none"):
        return Prompt(label=data.UNCONDITIONAL, raw_text=raw)
    if norm in data.LABELS:
        return Prompt(label=norm, raw_text=raw)
    raise KeyError(f"prompt {text!r} not in vocabulary {list(data.LABELS)}")


@dataclass
class DenoiserArch:
    latent_size: int = 16
    latent_channels: int = 4
    width: int = 64
    mid_width: int = 96
    emb_dim: int = 128
    temb_dim: int = 64
    num_classes: int = len(data.LABELS)


@dataclass
class DenoiserTrainConfig:
    epochs: int = 120
    batch_size: int = 32
    lr: float = 2e-3
    p_uncond: float = 0.1
    holdout_frac: float = 0.1
    seed: int = 0
    width: int = 64
    mid_width: int = 96


class _ResBlock:
    """conv-conv residual block with scale/shift feature conditioning."""

    def __init__(self, c_in, c_out, emb_dim, rng):
        self.gn1 = nn.GroupNorm(8, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, rng)
        # projects the condition vector to a per-channel (gain, bias) pair
        # applied after gn2 so normalization cannot wash the signal out
        self.emb = nn.Dense(emb_dim, 2 * c_out, rng)
        self.gn2 = nn.GroupNorm(8, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, rng, scale=0.3)
        self.skip = nn.Conv2d(c_in, c_out, 1, rng) if c_in != c_out else None

    def named_layers(self, prefix):
        out = [(f"{prefix}.gn1", self.gn1), (f"{prefix}.conv1", self.conv1),
               (f"{prefix}.emb", self.emb), (f"{prefix}.gn2", self.gn2),
               (f"{prefix}.conv2", self.conv2)]
        if self.skip is not None:
            out.append((f"{prefix}.skip", self.skip))
        return out

    def forward(self, x, cond):
        c = {}
        h, c["gn1"] = self.gn1.forward(x)
        h, c["act1"] = nn.silu(h)
        h, c["conv1"] = self.conv1.forward(h)
        e, c["eact"] = nn.silu(cond)
        e, c["emb"] = self.emb.forward(e)
        half = e.shape[1] // 2
        gain, bias = e[:, :half], e[:, half:]
        hn, c["gn2"] = self.gn2.forward(h)
        c["gain"], c["hn"] = gain, hn
        h2 = hn * (F32(1.0) + gain[:, None, None, :]) + bias[:, None, None, :]
        h2, c["act2"] = nn.silu(h2)
        h2, c["conv2"] = self.conv2.forward(h2)
        if self.skip is not None:
            xs, c["skip"] = self.skip.forward(x)
        else:
            xs = x
        return h2 + xs, c

    def backward(self, dy, c):
        grads = {}
        dh2, g = self.conv2.backward(dy, c["conv2"])
        grads["conv2"] = g
        dh2 = nn.silu_back(dh2, c["act2"])
        dgain = (dh2 * c["hn"]).sum(axis=(1, 2))
        dbias = dh2.sum(axis=(1, 2))
        dhn = dh2 * (F32(1.0) + c["gain"][:, None, None, :])
        de = np.concatenate([dgain, dbias], axis=1)
        de, g = self.emb.backward(de.astype(F32), c["emb"])
        grads["emb"] = g
        dcond = nn.silu_back(de, c["eact"])
        dh, g = self.gn2.backward(dhn, c["gn2"])
        grads["gn2"] = g
        dh1, g = self.conv1.backward(dh, c["conv1"])
        grads["conv1"] = g
        dh1 = nn.silu_back(dh1, c["act1"])
        dx, g = self.gn1.backward(dh1, c["gn1"])
        grads["gn1"] = g
        if self.skip is not None:
            dxs, g = self.skip.backward(dy, c["skip"])
            grads["skip"] = g
            dx = dx + dxs
        else:
            dx = dx + dy
        return dx, dcond, grads


class DenoiserModel:
    """UNet eps-predictor; immutable after load, predict is read-only."""

    def __init__(self, arch: DenoiserArch = None, schedule_spec: dict = None, init_seed: int = 0):
        self.arch = arch or DenoiserArch()
        # the schedule this model was trained against; predictions at other
        # schedules are meaningless, so mismatches are rejected
        self.schedule_spec = schedule_spec or {"num_train_steps": 1000, "beta_spec": "linear"}
        a = self.arch
        rng = np.random.default_rng(init_seed)
        self.temb1 = nn.Dense(a.temb_dim, a.emb_dim, rng)
        self.temb2 = nn.Dense(a.emb_dim, a.emb_dim, rng)
        self.label_emb = nn.Embedding(a.num_classes + 1, a.emb_dim, rng, scale=0.5)
        self.conv_in = nn.Conv2d(a.latent_channels, a.width, 3, rng)
        self.block1 = _ResBlock(a.width, a.width, a.emb_dim, rng)
        self.down = nn.Conv2d(a.width, a.width, 3, rng, stride=2)
        self.block2 = _ResBlock(a.width, a.mid_width, a.emb_dim, rng)
        self.block3 = _ResBlock(a.mid_width, a.mid_width, a.emb_dim, rng)
        self.upconv = nn.Conv2d(a.mid_width, a.width, 3, rng)
        self.block4 = _ResBlock(2 * a.width, a.width, a.emb_dim, rng)
        self.gn_out = nn.GroupNorm(8, a.width)
        self.conv_out = nn.Conv2d(a.width, a.latent_channels, 3, rng, scale=0.1)
        self.meta = {}

    @property
    def uncond_index(self):
        return self.arch.num_classes

    def cond_index(self, prompt: Prompt) -> int:
        if prompt.is_unconditional:
            return self.uncond_index
        return data.label_index(prompt.label)

    def check_schedule(self, sched):
        spec = {"num_train_steps": sched.num_train_steps, "beta_spec": sched.beta_spec}
        if spec != self.schedule_spec:
            raise ValueError(f"schedule {spec} does not match model schedule {self.schedule_spec}")

    def named_layers(self):
        out = [("temb1", self.temb1), ("temb2", self.temb2),
               ("label_emb", self.label_emb), ("conv_in", self.conv_in)]
        out += self.block1.named_layers("b1")
        out += [("down", self.down)]
        out += self.block2.named_layers("b2")
        out += self.block3.named_layers("b3")
        out += [("upconv", self.upconv)]
        out += self.block4.named_layers("b4")
        out += [("gn_out", self.gn_out), ("conv_out", self.conv_out)]
        return out

    def flat_params(self):
        return nn.flatten_params(self.named_layers())

    # -- forward/backward --------------------------------------------------

    def _cond_vector(self, t, cond_idx, n):
        c = {}
        temb = nn.timestep_embedding(np.broadcast_to(np.asarray(t), (n,)), self.arch.temb_dim)
        h, c["temb1"] = self.temb1.forward(temb)
        h, c["tact"] = nn.silu(h)
        h, c["temb2"] = self.temb2.forward(h)
        le, c["label"] = self.label_emb.forward(np.broadcast_to(np.asarray(cond_idx), (n,)))
        return h + le, c

    def _cond_backward(self, dcond, c, grads):
        _, g = self.label_emb.backward(dcond, c["label"])
        nn.merge_grads(grads, "label_emb", g)
        dh, g = self.temb2.backward(dcond, c["temb2"])
        nn.merge_grads(grads, "temb2", g)
        dh = nn.silu_back(dh, c["tact"])
        _, g = self.temb1.backward(dh, c["temb1"])
        nn.merge_grads(grads, "temb1", g)

    def forward(self, z, t, cond_idx):
        """Raw eps prediction for a batch; t and cond_idx scalar or (N,)."""
        z = np.asarray(z, dtype=F32)
        n = z.shape[0]
        c = {}
        cond, c["cond"] = self._cond_vector(t, cond_idx, n)
        h0, c["conv_in"] = self.conv_in.forward(z)
        h1, c["b1"] = self.block1.forward(h0, cond)
        h2, c["down"] = self.down.forward(h1)
        h3, c["b2"] = self.block2.forward(h2, cond)
        h4, c["b3"] = self.block3.forward(h3, cond)
        h5, c["up"] = nn.upsample2(h4)
        h6, c["upconv"] = self.upconv.forward(h5)
        h7 = np.concatenate([h6, h1], axis=-1)
        h8, c["b4"] = self.block4.forward(h7, cond)
        h9, c["gn_out"] = self.gn_out.forward(h8)
        h10, c["act_out"] = nn.silu(h9)
        out, c["conv_out"] = self.conv_out.forward(h10)
        return out, c

    def backward(self, dout, c):
        grads = {}
        w = self.arch.width
        dh, g = self.conv_out.backward(dout, c["conv_out"])
        nn.merge_grads(grads, "conv_out", g)
        dh = nn.silu_back(dh, c["act_out"])
        dh, g = self.gn_out.backward(dh, c["gn_out"])
        nn.merge_grads(grads, "gn_out", g)
        dh7, dc4, g = self.block4.backward(dh, c["b4"])
        grads.update({f"b4.{k}.{pk}": pv for k, gd in g.items() for pk, pv in gd.items()})
        dh6 = dh7[..., :w]
        dh1_skip = dh7[..., w:]
        dh5, g = self.upconv.backward(dh6, c["upconv"])
        nn.merge_grads(grads, "upconv", g)
        dh4 = nn.upsample2_back(dh5, c["up"])
        dh3, dc3, g = self.block3.backward(dh4, c["b3"])
        grads.update({f"b3.{k}.{pk}": pv for k, gd in g.items() for pk, pv in gd.items()})
        dh2, dc2, g = self.block2.backward(dh3, c["b2"])
        grads.update({f"b2.{k}.{pk}": pv for k, gd in g.items() for pk, pv in gd.items()})
        dh1, g = self.down.backward(dh2, c["down"])
        nn.merge_grads(grads, "down", g)
        dh1 = dh1 + dh1_skip
        dh0, dc1, g = self.block1.backward(dh1, c["b1"])
        grads.update({f"b1.{k}.{pk}": pv for k, gd in g.items() for pk, pv in gd.items()})
        dz, g = self.conv_in.backward(dh0, c["conv_in"])
        nn.merge_grads(grads, "conv_in", g)
        self._cond_backward(dc1 + dc2 + dc3 + dc4, c["cond"], grads)
        return dz, grads

    # -- public prediction API ----------------------------------------------

    def _validate_t(self, t):
        t = int(t)
        T = self.schedule_spec["num_train_steps"]
        if not 0 <= t < T:
            raise ValueError(f"step index {t} outside schedule of {T} steps")
        return t

    def predict_eps(self, zt, prompt: Prompt, t, guidance_scale=1.0):
        """Guided prediction eps_u + s*(eps_c - eps_u); s=1 and s=0 collapse
        to the pure conditional / unconditional branch exactly."""
        if guidance_scale < 0:
            raise ValueError("guidance_scale must be nonnegative")
        zt = np.asarray(zt, dtype=F32)
        single = zt.ndim == 3
        if single:
            zt = zt[None]
        expect = (self.arch.latent_size, self.arch.latent_size, self.arch.latent_channels)
        if zt.shape[1:] != expect:
            raise ValueError(f"latent shape {zt.shape[1:]} does not match model {expect}")
        t = self._validate_t(t)
        idx = self.cond_index(prompt)
        s = float(guidance_scale)
        if s == 1.0 or prompt.is_unconditional:
            out, _ = self.forward(zt, t, idx)
        elif s == 0.0:
            out, _ = self.forward(zt, t, self.uncond_index)
        else:
            eps_c, _ = self.forward(zt, t, idx)
            eps_u, _ = self.forward(zt, t, self.uncond_index)
            out = eps_u + F32(s) * (eps_c - eps_u)
        return out[0] if single else out


# ---------------------------------------------------------------------------
# training

def encode_corpus(vae, imgs, chunk=64):
    """Mean-mode latents for a stack of images, chunked to bound memory."""
    outs = [vae.encode(imgs[i:i + chunk]) for i in range(0, len(imgs), chunk)]
    return np.concatenate(outs, axis=0)


def _noise_batch(sched, z0, t_batch, eps):
    ab = sched.alpha_bars[t_batch]
    a = np.sqrt(ab).astype(F32)[:, None, None, None]
    b = np.sqrt(1.0 - ab).astype(F32)[:, None, None, None]
    return a * z0 + b * eps


def _holdout_mse(model, sched, z_hold, idx_hold, t_hold, eps_hold):
    """eps-MSE on frozen holdout draws so the curve is comparable across epochs."""
    if len(z_hold) == 0:
        return float("nan")
    zt = _noise_batch(sched, z_hold, t_hold, eps_hold)
    pred, _ = model.forward(zt, t_hold, idx_hold)
    return float(np.mean((pred - eps_hold) ** 2))


def train_denoiser(vae, corpus_images, labels, sched, cfg: DenoiserTrainConfig = None,
                   resume=None, progress=None):
    """eps-prediction MSE training with label dropout for guidance."""
    cfg = cfg or DenoiserTrainConfig()
    imgs = np.asarray(corpus_images, dtype=F32)
    if imgs.ndim != 4 or imgs.shape[0] == 0:
        raise ValueError("corpus must be a nonempty (N,H,W,3) array")
    if len(labels) != len(imgs):
        raise ValueError("labels/images length mismatch")

    z_all = encode_corpus(vae, imgs)
    lbl_idx = np.array([data.label_index(l) for l in labels], dtype=np.int64)
    T = sched.num_train_steps

    if resume is not None:
        model, adam, rng, start_epoch, curves = resume
    else:
        arch = DenoiserArch(latent_size=z_all.shape[1], latent_channels=z_all.shape[3],
                            width=cfg.width, mid_width=cfg.mid_width)
        spec = {"num_train_steps": T, "beta_spec": sched.beta_spec}
        model = DenoiserModel(arch, spec, init_seed=cfg.seed)
        adam = Adam(model.flat_params(), lr=cfg.lr)
        rng = np.random.default_rng(cfg.seed)
        start_epoch = 0
        curves = {"train_loss": [], "holdout_mse": []}

    split_rng = np.random.default_rng(cfg.seed + 1)
    train_idx, hold_idx = training.split_holdout(split_rng, len(imgs), cfg.holdout_frac)
    hold_rng = np.random.default_rng(cfg.seed + 2)
    t_hold = hold_rng.integers(0, T, size=len(hold_idx))
    eps_hold = hold_rng.standard_normal((len(hold_idx),) + z_all.shape[1:], dtype=F32)
    uncond = model.uncond_index

    for epoch in range(start_epoch, cfg.epochs):
        losses = []
        for batch in training.minibatches(rng, train_idx, cfg.batch_size):
            z0 = z_all[batch]
            n = len(batch)
            t = rng.integers(0, T, size=n)
            eps = rng.standard_normal(z0.shape, dtype=F32)
            drop = rng.random(n) < cfg.p_uncond
            idx = np.where(drop, uncond, lbl_idx[batch])
            zt = _noise_batch(sched, z0, t, eps)
            pred, caches = model.forward(zt, t, idx)
            loss = float(np.mean((pred - eps) ** 2))
            training.check_finite(loss, f"denoiser epoch {epoch}")
            losses.append(loss)
            dout = (2.0 / pred.size) * (pred - eps)
            _, grads = model.backward(dout.astype(F32), caches)
            adam.step(grads)
        train_loss = float(np.mean(losses))
        hold = _holdout_mse(model, sched, z_all[hold_idx], lbl_idx[hold_idx], t_hold, eps_hold)
        curves["train_loss"].append(train_loss)
        curves["holdout_mse"].append(hold)
        if progress:
            progress(f"denoiser epoch {epoch + 1}/{cfg.epochs} loss={train_loss:.5f} holdout={hold:.5f}")

    model.meta = {
        "train_config": asdict(cfg),
        "train_loss": curves["train_loss"],
        "holdout_mse": curves["holdout_mse"],
    }
    return model, adam, rng, curves


# ---------------------------------------------------------------------------
# persistence

def save_denoiser(model: DenoiserModel, path, adam=None, rng=None):
    header = {
        "arch": asdict(model.arch),
        "schedule_spec": model.schedule_spec,
        "meta": model.meta,
    }
    arrays = dict(model.flat_params())
    if adam is not None and rng is not None:
        header["rng_state"] = training.rng_state(rng)
        header["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps}
        for k, v in adam.state_dict().items():
            arrays[f"opt.{k}"] = v
    checkpoint.save_checkpoint(path, "denoiser", header, arrays)


def load_denoiser(path, with_train_state=False):
    header, arrays = checkpoint.load_checkpoint(path, expect_kind="denoiser")
    model = DenoiserModel(DenoiserArch(**header["arch"]), header["schedule_spec"], init_seed=0)
    nn.load_flat_params(model.named_layers(), arrays)
    model.meta = header.get("meta", {})
    if not with_train_state:
        return model
    if "rng_state" not in header:
        raise ValueError(f"{path}: checkpoint has no training state to resume from")
    adam = Adam(model.flat_params(), **header["adam"])
    adam.load_state_dict({k[len("opt."):]: v for k, v in arrays.items() if k.startswith("opt.")})
    rng = training.rng_from_state(header["rng_state"])
    return model, adam, rng
