"""Mask-blended latent editing.

The core loop noises the encoded source image to the starting level, then
alternates denoising steps on the foreground with re-noised background
latents, blending the two through a (possibly progressively shrinking)
latent mask each step. The background track reuses one fixed noise draw
per batch element, which makes background preservation exact rather than
statistical: outside the mask every intermediate latent equals
noise(z_init, t, eps_fixed) bit-for-bit.
"""

from dataclasses import dataclass, field

import numpy as np

from . import images, kernels
from .schedule import sampler_subsequence

F32 = np.float32

RECONSTRUCTION_MODES = ("none", "stitch", "poisson", "latent_opt", "weight_opt")

PYRAMID_KERNELS = (7, 5, 3, None)  # None = original mask, no dilation


@dataclass
class EditConfig:
    num_sampler_steps: int = 50
    guidance_scale: float = 3.0
    use_progressive_shrinking: bool = True
    batch_size: int = 1
    seed: int = 0
    reconstruction_mode: str = "none"
    eta: float = 0.0  # 0 = deterministic sampler
    snapshot_stride: int = 0  # 0 disables per-step process snapshots
    record_trace: bool = False  # keep per-step post-blend latents for inspection
    step_budget: int = 8192

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.num_sampler_steps < 1:
            raise ValueError("num_sampler_steps must be >= 1")
        if self.reconstruction_mode not in RECONSTRUCTION_MODES:
            raise ValueError(f"reconstruction_mode must be one of {RECONSTRUCTION_MODES}")
        if self.batch_size * self.num_sampler_steps > self.step_budget:
            raise ValueError(
                f"batch_size*steps = {self.batch_size * self.num_sampler_steps} "
                f"exceeds step budget {self.step_budget}")


@dataclass
class MaskPyramid:
    """Per-step latent masks; later masks are subsets of earlier ones."""

    masks: np.ndarray  # (num_steps, h, w) uint8
    phase_sizes: tuple
    kernel_sizes: tuple = PYRAMID_KERNELS
    fallback: bool = False  # num_steps < 4: original mask everywhere


@dataclass
class EditOutput:
    image: np.ndarray
    z0: np.ndarray
    snapshots: list = field(default_factory=list)
    # with record_trace: the fixed background noise draw and, per step,
    # (t_next, blend mask, latent after blending)
    eps_fixed: np.ndarray = None
    trace: list = field(default_factory=list)


def _check_binary_mask(m):
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    vals = np.unique(m)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError("mask must be binary over {0,1}")
    return m.astype(np.uint8)


def downsample_mask(m, f: int):
    """Average-pool fxf blocks, threshold at 0.5 with ties rounding to 1."""
    m = _check_binary_mask(m)
    h, w = m.shape
    if h % f or w % f:
        raise ValueError(f"mask dims {m.shape} not divisible by factor {f}")
    pooled = m.reshape(h // f, f, w // f, f).mean(axis=(1, 3))
    return (pooled >= 0.5).astype(np.uint8)


def build_mask_pyramid(m_latent, num_steps: int) -> MaskPyramid:
    """Four contiguous dilation phases (7/5/3/original), earliest phases
    absorb the remainder when num_steps is not divisible by 4."""
    m_latent = _check_binary_mask(m_latent)
    if num_steps < 4:
        masks = np.repeat(m_latent[None], num_steps, axis=0)
        return MaskPyramid(masks=masks, phase_sizes=(num_steps,), fallback=True)
    base, rem = divmod(num_steps, 4)
    sizes = tuple(base + (1 if i < rem else 0) for i in range(4))
    per_phase = [
        kernels.dilate_binary(m_latent, k) if k is not None else m_latent
        for k in PYRAMID_KERNELS
    ]
    masks = np.concatenate([
        np.repeat(pm[None], size, axis=0) for pm, size in zip(per_phase, sizes)
    ], axis=0)
    return MaskPyramid(masks=masks, phase_sizes=sizes)


def _diffusion_loop(vae, den, sched, z_init, prompt, cfg: EditConfig, step_masks):
    """Shared sampler loop; step_masks=None runs the pure denoise path with
    an identical rng discipline, so an all-ones mask reproduces it exactly."""
    den.check_schedule(sched)
    steps = sampler_subsequence(sched.num_train_steps, cfg.num_sampler_steps)
    b = cfg.batch_size
    rng = np.random.default_rng(cfg.seed)
    eps_fixed = rng.standard_normal((b,) + z_init.shape, dtype=F32)
    z_init_b = np.broadcast_to(z_init, (b,) + z_init.shape)
    z = sched.noise(z_init_b, int(steps[0]), eps_fixed)
    snaps = [[] for _ in range(b)]
    traces = [[] for _ in range(b)]
    for i, t in enumerate(steps):
        t = int(t)
        t_next = int(steps[i + 1]) if i + 1 < len(steps) else None
        eps_hat = den.predict_eps(z, prompt, t, cfg.guidance_scale)
        if cfg.snapshot_stride and (i % cfg.snapshot_stride == 0 or i == len(steps) - 1):
            frame = vae.decode(sched.estimate_z0(z, eps_hat, t))
            for j in range(b):
                snaps[j].append(frame[j])
        if cfg.eta == 0.0:
            z_fg = sched.sampler_step(z, eps_hat, t, t_next)
        else:
            z_fg = sched.sampler_step_stochastic(z, eps_hat, t, t_next, cfg.eta, rng)
        if step_masks is None:
            z = z_fg
        else:
            z_bg = sched.noise(z_init_b, t_next, eps_fixed)
            keep = step_masks[i].astype(bool)[None, :, :, None]
            z = np.where(keep, z_fg, z_bg)
        if cfg.record_trace:
            step_mask = None if step_masks is None else step_masks[i]
            for j in range(b):
                traces[j].append((t_next, step_mask, z[j].copy()))
    out_images = vae.decode(z)
    return [
        EditOutput(image=out_images[j], z0=z[j], snapshots=snaps[j],
                   eps_fixed=eps_fixed[j] if cfg.record_trace else None,
                   trace=traces[j])
        for j in range(b)
    ]


def _check_edit_inputs(vae, x, m):
    x = np.asarray(x, dtype=F32)
    if x.ndim != 3 or x.shape[-1] != 3:
        raise ValueError(f"image must be (H,W,3), got {x.shape}")
    if m is not None:
        m = _check_binary_mask(m)
        if m.shape != x.shape[:2]:
            raise ValueError(f"mask shape {m.shape} does not match image {x.shape[:2]}")
    return x, m


def blended_edit(vae, den, sched, x, m, prompt, cfg: EditConfig):
    """Run the blended editing loop; returns one EditOutput per batch element.

    The returned z0 latents equal encode(x) exactly outside the downsampled
    mask. Reconstruction modes are applied by callers, not here.
    """
    cfg.validate()
    x, m = _check_edit_inputs(vae, x, m)
    z_init = vae.encode(x)
    m_latent = downsample_mask(m, vae.factor)
    if cfg.use_progressive_shrinking:
        step_masks = build_mask_pyramid(m_latent, cfg.num_sampler_steps).masks
    else:
        step_masks = np.repeat(m_latent[None], cfg.num_sampler_steps, axis=0)
    return _diffusion_loop(vae, den, sched, z_init, prompt, cfg, step_masks)


def generate(vae, den, sched, x, prompt, cfg: EditConfig):
    """Pure conditional generation seeded from the encoded source image;
    bit-identical to blended_edit with an all-ones mask and the same seed."""
    cfg.validate()
    x, _ = _check_edit_inputs(vae, x, None)
    z_init = vae.encode(x)
    return _diffusion_loop(vae, den, sched, z_init, prompt, cfg, None)


def visualize_process(snapshots, path):
    """Write per-step clean-estimate decodes as one horizontal strip PNG."""
    strip = images.horizontal_strip(snapshots)
    images.save_png(strip, path)
    return path
