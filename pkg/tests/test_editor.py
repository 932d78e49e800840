"""Editing loop: mask plumbing, blending order, exactness guarantees."""

import numpy as np
import pytest

from latentblend import data, editor, schedule
from latentblend.denoiser import resolve_prompt

F32 = np.float32


class StubVae:
    """Identity codec at factor 1: latents are the pixels themselves."""

    factor = 1
    latent_scale = 1.0

    def encode(self, x, seed=None):
        return np.asarray(x, dtype=F32)

    def decode(self, z):
        return np.asarray(z, dtype=F32).copy()


class StubDenoiser:
    """Predicts a fixed eps field regardless of input."""

    def __init__(self, eps_value):
        self.eps_value = np.asarray(eps_value, dtype=F32)

    def check_schedule(self, sched):
        pass

    def predict_eps(self, zt, prompt, t, guidance_scale):
        return np.broadcast_to(self.eps_value, zt.shape).astype(F32)


PROMPT = resolve_prompt("red-circle")


# ---------------------------------------------------------------------------
# mask downsampling

def test_downsample_quadrant():
    m = np.zeros((8, 8), dtype=np.uint8)
    m[:4, :4] = 1
    np.testing.assert_array_equal(editor.downsample_mask(m, 4), [[1, 0], [0, 0]])


def test_downsample_threshold_and_ties():
    # 2x2 blocks: 1/4 coverage -> 0, 2/4 (tie at 0.5) -> 1, 3/4 -> 1
    m = np.array([
        [1, 0, 1, 1, 1, 1],
        [0, 0, 0, 0, 1, 0],
    ], dtype=np.uint8)
    np.testing.assert_array_equal(editor.downsample_mask(m, 2), [[0, 1, 1]])


def test_downsample_factor_one_is_identity():
    m = (np.random.default_rng(0).random((6, 6)) < 0.5).astype(np.uint8)
    np.testing.assert_array_equal(editor.downsample_mask(m, 1), m)


def test_downsample_validation():
    with pytest.raises(ValueError):
        editor.downsample_mask(np.zeros((6, 6), dtype=np.uint8), 4)
    with pytest.raises(ValueError):
        editor.downsample_mask(np.full((4, 4), 2, dtype=np.uint8), 2)
    with pytest.raises(ValueError):
        editor.downsample_mask(np.zeros((4, 4, 1), dtype=np.uint8), 2)


# ---------------------------------------------------------------------------
# mask pyramid

def center_dot(n=16):
    m = np.zeros((n, n), dtype=np.uint8)
    m[n // 2, n // 2] = 1
    return m


@pytest.mark.parametrize("steps,sizes", [
    (8, (2, 2, 2, 2)),
    (10, (3, 3, 2, 2)),
    (4, (1, 1, 1, 1)),
    (7, (2, 2, 2, 1)),
    (5, (2, 1, 1, 1)),
])
def test_pyramid_phase_sizes(steps, sizes):
    pyr = editor.build_mask_pyramid(center_dot(), steps)
    assert pyr.phase_sizes == sizes
    assert not pyr.fallback
    assert pyr.masks.shape == (steps, 16, 16)


def test_pyramid_footprints_from_single_pixel():
    pyr = editor.build_mask_pyramid(center_dot(), 4)
    assert pyr.masks[0].sum() == 49  # 7x7
    assert pyr.masks[1].sum() == 25  # 5x5
    assert pyr.masks[2].sum() == 9   # 3x3
    assert pyr.masks[3].sum() == 1   # original


def test_pyramid_masks_shrink_monotonically():
    rng = np.random.default_rng(1)
    m = (rng.random((16, 16)) < 0.1).astype(np.uint8)
    pyr = editor.build_mask_pyramid(m, 9)
    for i in range(1, len(pyr.masks)):
        assert np.all(pyr.masks[i] <= pyr.masks[i - 1])
    np.testing.assert_array_equal(pyr.masks[-1], m)


def test_pyramid_fallback_below_four_steps():
    m = center_dot()
    for steps in (1, 2, 3):
        pyr = editor.build_mask_pyramid(m, steps)
        assert pyr.fallback
        assert pyr.phase_sizes == (steps,)
        assert pyr.masks.shape[0] == steps
        for step_mask in pyr.masks:
            np.testing.assert_array_equal(step_mask, m)


# ---------------------------------------------------------------------------
# the loop itself, against hand-stepped expectations

def hand_loop(sched, z_init, eps_const, mask, seed, steps_list):
    """Independent re-derivation of the blended loop for the stub models."""
    rng = np.random.default_rng(seed)
    eps_fixed = rng.standard_normal((1,) + z_init.shape, dtype=F32)
    zb = np.broadcast_to(z_init, (1,) + z_init.shape)
    z = sched.noise(zb, int(steps_list[0]), eps_fixed)
    keep = mask.astype(bool)[None, :, :, None]
    for i, t in enumerate(steps_list):
        t_next = int(steps_list[i + 1]) if i + 1 < len(steps_list) else None
        eps_hat = np.broadcast_to(eps_const, z.shape).astype(F32)
        z_fg = sched.sampler_step(z, eps_hat, int(t), t_next)
        z_bg = sched.noise(zb, t_next, eps_fixed)
        z = np.where(keep, z_fg, z_bg)
    return z[0], eps_fixed[0]


def test_loop_matches_hand_derivation():
    sched = schedule.make_schedule(6, 3, betas=[0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(2, 2, 3)).astype(F32)
    eps_const = rng.standard_normal((2, 2, 3)).astype(F32)
    mask = np.array([[1, 0], [0, 0]], dtype=np.uint8)

    cfg = editor.EditConfig(num_sampler_steps=3, use_progressive_shrinking=False,
                            batch_size=1, seed=11, record_trace=True)
    out = editor.blended_edit(StubVae(), StubDenoiser(eps_const), sched, x, mask,
                              PROMPT, cfg)
    assert len(out) == 1
    steps_list = schedule.sampler_subsequence(6, 3)
    want_z, want_eps = hand_loop(sched, x, eps_const, mask, 11, steps_list)
    np.testing.assert_array_equal(out[0].z0, want_z)
    np.testing.assert_array_equal(out[0].eps_fixed, want_eps)
    np.testing.assert_array_equal(out[0].image, want_z)  # identity decode
    assert len(out[0].trace) == 3
    assert out[0].trace[0][0] == int(steps_list[1])
    assert out[0].trace[-1][0] is None


def test_loop_blend_happens_at_next_level():
    # one sampler step: t=T-1 straight to clean; background must be z_init
    sched = schedule.make_schedule(4, 1, betas=[0.1, 0.1, 0.1, 0.1])
    x = np.full((2, 2, 3), 0.25, dtype=F32)
    eps_const = np.ones((2, 2, 3), dtype=F32)
    mask = np.array([[0, 1], [1, 1]], dtype=np.uint8)
    cfg = editor.EditConfig(num_sampler_steps=1, use_progressive_shrinking=False,
                            batch_size=1, seed=0)
    out = editor.blended_edit(StubVae(), StubDenoiser(eps_const), sched, x, mask,
                              PROMPT, cfg)[0]
    # outside the mask the final latent is exactly the clean source pixel
    assert out.z0[0, 0, 0] == x[0, 0, 0]
    np.testing.assert_array_equal(out.z0[0, 0], x[0, 0])
    # inside it is the one-step clean estimate, which differs
    assert not np.array_equal(out.z0[1, 1], x[1, 1])


# ---------------------------------------------------------------------------
# exactness guarantees with real (tiny) models

def test_all_zero_mask_returns_source_latent(tiny_vae, tiny_denoiser):
    sched = schedule.default_schedule(8)
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(64, 64, 3)).astype(F32)
    cfg = editor.EditConfig(num_sampler_steps=8, batch_size=2, seed=4)
    outs = editor.blended_edit(tiny_vae, tiny_denoiser, sched, x,
                               np.zeros((64, 64), dtype=np.uint8), PROMPT, cfg)
    z_init = tiny_vae.encode(x)
    want_img = tiny_vae.decode(z_init)
    for out in outs:
        np.testing.assert_array_equal(out.z0, z_init)
        np.testing.assert_array_equal(out.image, want_img)


def test_all_ones_mask_equals_pure_generation(tiny_vae, tiny_denoiser):
    sched = schedule.default_schedule(6)
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, size=(64, 64, 3)).astype(F32)
    cfg = editor.EditConfig(num_sampler_steps=6, batch_size=2, seed=9)
    edited = editor.blended_edit(tiny_vae, tiny_denoiser, sched, x,
                                 np.ones((64, 64), dtype=np.uint8), PROMPT, cfg)
    pure = editor.generate(tiny_vae, tiny_denoiser, sched, x, PROMPT, cfg)
    for e, p in zip(edited, pure):
        np.testing.assert_array_equal(e.z0, p.z0)
        np.testing.assert_array_equal(e.image, p.image)


def test_background_latents_preserved_every_step(tiny_vae, tiny_denoiser):
    sched = schedule.default_schedule(10)
    x, _ = data.generate_scene(np.random.default_rng(6))
    m = np.zeros((64, 64), dtype=np.uint8)
    m[8:40, 12:52] = 1
    cfg = editor.EditConfig(num_sampler_steps=10, batch_size=2, seed=7,
                            record_trace=True)
    outs = editor.blended_edit(tiny_vae, tiny_denoiser, sched, x, m, PROMPT, cfg)
    z_init = tiny_vae.encode(x)
    for out in outs:
        for t_next, step_mask, z_after in out.trace:
            z_bg = sched.noise(z_init, t_next, out.eps_fixed)
            outside = step_mask == 0
            np.testing.assert_array_equal(z_after[outside], z_bg[outside])
        # last step mask is the original latent mask
        np.testing.assert_array_equal(out.trace[-1][1],
                                      editor.downsample_mask(m, tiny_vae.factor))


def test_same_seed_reproduces_bitwise(tiny_vae, tiny_denoiser):
    sched = schedule.default_schedule(5)
    rng = np.random.default_rng(8)
    x = rng.uniform(-1, 1, size=(64, 64, 3)).astype(F32)
    m = np.zeros((64, 64), dtype=np.uint8)
    m[:32] = 1
    cfg = editor.EditConfig(num_sampler_steps=5, batch_size=2, seed=21)
    a = editor.blended_edit(tiny_vae, tiny_denoiser, sched, x, m, PROMPT, cfg)
    b = editor.blended_edit(tiny_vae, tiny_denoiser, sched, x, m, PROMPT, cfg)
    for oa, ob in zip(a, b):
        np.testing.assert_array_equal(oa.image, ob.image)
    c = editor.blended_edit(tiny_vae, tiny_denoiser, sched, x, m, PROMPT,
                            editor.EditConfig(num_sampler_steps=5, batch_size=2, seed=22))
    assert not np.array_equal(a[0].image, c[0].image)


def test_eta_changes_result_but_stays_reproducible(tiny_vae, tiny_denoiser):
    sched = schedule.default_schedule(5)
    x = np.zeros((64, 64, 3), dtype=F32)
    m = np.ones((64, 64), dtype=np.uint8)
    base = dict(num_sampler_steps=5, batch_size=1, seed=3)
    det = editor.blended_edit(tiny_vae, tiny_denoiser, sched, x, m, PROMPT,
                              editor.EditConfig(**base))[0]
    s1 = editor.blended_edit(tiny_vae, tiny_denoiser, sched, x, m, PROMPT,
                             editor.EditConfig(eta=1.0, **base))[0]
    s2 = editor.blended_edit(tiny_vae, tiny_denoiser, sched, x, m, PROMPT,
                             editor.EditConfig(eta=1.0, **base))[0]
    np.testing.assert_array_equal(s1.image, s2.image)
    assert not np.array_equal(det.z0, s1.z0)


def test_snapshot_stride_counts(tiny_vae, tiny_denoiser):
    sched = schedule.default_schedule(4)
    x = np.zeros((64, 64, 3), dtype=F32)
    m = np.ones((64, 64), dtype=np.uint8)
    cfg = editor.EditConfig(num_sampler_steps=4, batch_size=1, seed=0, snapshot_stride=2)
    out = editor.blended_edit(tiny_vae, tiny_denoiser, sched, x, m, PROMPT, cfg)[0]
    # steps 0 and 2 by stride, plus the final step
    assert len(out.snapshots) == 3
    assert all(s.shape == (64, 64, 3) for s in out.snapshots)
    none = editor.EditConfig(num_sampler_steps=4, batch_size=1, seed=0)
    assert editor.blended_edit(tiny_vae, tiny_denoiser, sched, x, m, PROMPT,
                               none)[0].snapshots == []


def test_visualize_process_writes_strip(tmp_path, tiny_vae, tiny_denoiser):
    sched = schedule.default_schedule(3)
    x = np.zeros((64, 64, 3), dtype=F32)
    cfg = editor.EditConfig(num_sampler_steps=3, batch_size=1, seed=0, snapshot_stride=1)
    out = editor.generate(tiny_vae, tiny_denoiser, sched, x, PROMPT, cfg)[0]
    p = tmp_path / "strip.png"
    editor.visualize_process(out.snapshots, str(p))
    from latentblend import images
    strip = images.load_png(str(p))
    assert strip.shape == (64, 64 * 3, 3)


# ---------------------------------------------------------------------------
# config and input validation

def test_config_validation():
    with pytest.raises(ValueError):
        editor.EditConfig(batch_size=0).validate()
    with pytest.raises(ValueError):
        editor.EditConfig(num_sampler_steps=0).validate()
    with pytest.raises(ValueError):
        editor.EditConfig(reconstruction_mode="fancy").validate()
    with pytest.raises(ValueError, match="budget"):
        editor.EditConfig(batch_size=200, num_sampler_steps=50).validate()
    editor.EditConfig().validate()


def test_input_validation(tiny_vae, tiny_denoiser):
    sched = schedule.default_schedule(4)
    x = np.zeros((64, 64, 3), dtype=F32)
    cfg = editor.EditConfig(num_sampler_steps=4)
    with pytest.raises(ValueError):
        editor.blended_edit(tiny_vae, tiny_denoiser, sched, x,
                            np.zeros((32, 32), dtype=np.uint8), PROMPT, cfg)
    with pytest.raises(ValueError):
        editor.blended_edit(tiny_vae, tiny_denoiser, sched, x,
                            np.full((64, 64), 3, dtype=np.uint8), PROMPT, cfg)
    with pytest.raises(ValueError):
        editor.blended_edit(tiny_vae, tiny_denoiser, sched,
                            np.zeros((64, 64), dtype=F32),
                            np.zeros((64, 64), dtype=np.uint8), PROMPT, cfg)
