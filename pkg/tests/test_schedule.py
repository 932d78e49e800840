"""Schedule arithmetic against direct closed-form computation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentblend import schedule


def make_small():
    return schedule.make_schedule(4, 2, betas=[0.1, 0.2, 0.3, 0.4])


def test_hand_computed_alpha_bars():
    sched = make_small()
    np.testing.assert_allclose(sched.alpha_bars, [0.9, 0.72, 0.504, 0.3024], rtol=1e-15)
    assert sched.alpha_bar(0) == pytest.approx(0.9)
    assert sched.alpha_bar(None) == 1.0


def test_linear_beta_endpoints():
    sched = schedule.default_schedule()
    assert sched.num_train_steps == 1000
    assert sched.betas[0] == pytest.approx(1e-4, rel=1e-12)
    assert sched.betas[-1] == pytest.approx(2e-2, rel=1e-12)
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert sched.alpha_bars[-1] > 0


def test_cosine_betas_valid():
    sched = schedule.make_schedule(100, 10, "cosine")
    assert np.all(sched.betas > 0)
    assert np.all(sched.betas < 1)
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert sched.alpha_bars[0] > 0.99


def test_noise_matches_direct_formula():
    sched = schedule.default_schedule()
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = int(rng.integers(0, 1000))
        z0 = rng.standard_normal((4, 4, 2)).astype(np.float32)
        eps = rng.standard_normal((4, 4, 2)).astype(np.float32)
        ab = float(np.cumprod(1.0 - np.linspace(1e-4, 2e-2, 1000))[t])
        want = np.sqrt(ab) * z0.astype(np.float64) + np.sqrt(1 - ab) * eps.astype(np.float64)
        got = sched.noise(z0, t, eps)
        assert got.dtype == np.float32
        np.testing.assert_allclose(got, want, atol=1e-5)


def test_noise_to_clean_level_is_identity():
    sched = make_small()
    z0 = np.random.default_rng(1).standard_normal((3, 3, 1)).astype(np.float32)
    eps = np.ones_like(z0)
    np.testing.assert_array_equal(sched.noise(z0, None, eps), z0)


def test_estimate_z0_inverts_noise():
    sched = schedule.default_schedule()
    rng = np.random.default_rng(2)
    z0 = rng.standard_normal((8, 8, 4)).astype(np.float32)
    for t in (0, 17, 500, 999):
        eps = rng.standard_normal(z0.shape, dtype=np.float32)
        zt = sched.noise(z0, t, eps)
        np.testing.assert_allclose(sched.estimate_z0(zt, eps, t), z0, atol=1e-4)


def test_sampler_step_to_none_is_clean_estimate():
    sched = schedule.default_schedule()
    rng = np.random.default_rng(3)
    zt = rng.standard_normal((4, 4, 1)).astype(np.float32)
    eps = rng.standard_normal(zt.shape, dtype=np.float32)
    np.testing.assert_array_equal(sched.sampler_step(zt, eps, 300, None),
                                  sched.estimate_z0(zt, eps, 300))


def test_sampler_step_consistent_with_exact_eps():
    # with a perfect noise prediction the deterministic update lands exactly
    # on the re-noised clean latent at the next level
    sched = schedule.default_schedule()
    rng = np.random.default_rng(4)
    z0 = rng.standard_normal((6, 6, 2)).astype(np.float32)
    eps = rng.standard_normal(z0.shape, dtype=np.float32)
    for t, t_next in [(999, 500), (500, 100), (100, 0), (10, None)]:
        zt = sched.noise(z0, t, eps)
        stepped = sched.sampler_step(zt, eps, t, t_next)
        np.testing.assert_allclose(stepped, sched.noise(z0, t_next, eps), atol=2e-4)


def test_stochastic_step_eta_zero_equals_deterministic():
    sched = schedule.default_schedule()
    rng = np.random.default_rng(5)
    zt = rng.standard_normal((4, 4, 4)).astype(np.float32)
    eps = rng.standard_normal(zt.shape, dtype=np.float32)
    det = sched.sampler_step(zt, eps, 800, 400)
    sto = sched.sampler_step_stochastic(zt, eps, 800, 400, 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(det, sto)


def test_stochastic_step_reproducible_and_distinct():
    sched = schedule.default_schedule()
    rng = np.random.default_rng(6)
    zt = rng.standard_normal((4, 4, 4)).astype(np.float32)
    eps = rng.standard_normal(zt.shape, dtype=np.float32)
    a = sched.sampler_step_stochastic(zt, eps, 800, 400, 1.0, np.random.default_rng(9))
    b = sched.sampler_step_stochastic(zt, eps, 800, 400, 1.0, np.random.default_rng(9))
    c = sched.sampler_step_stochastic(zt, eps, 800, 400, 1.0, np.random.default_rng(10))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    det = sched.sampler_step(zt, eps, 800, 400)
    assert not np.array_equal(a, det)


def test_step_index_validation():
    sched = make_small()
    z = np.zeros((2, 2, 1), dtype=np.float32)
    with pytest.raises(ValueError):
        sched.noise(z, 4, np.zeros_like(z))
    with pytest.raises(ValueError):
        sched.noise(z, -1, np.zeros_like(z))
    with pytest.raises(ValueError):
        sched.noise(z, 0, np.zeros((1, 2, 1), dtype=np.float32))
    with pytest.raises(ValueError):
        sched.sampler_step(z, z, None, 0)
    with pytest.raises(ValueError):
        sched.sampler_step(z, z, 1, 2)
    with pytest.raises(ValueError):
        sched.sampler_step(z, z, 1, 1)
    with pytest.raises(ValueError):
        sched.estimate_z0(z, np.zeros((1, 2, 1), dtype=np.float32), 0)


def test_make_schedule_validation():
    with pytest.raises(ValueError):
        schedule.make_schedule(0, 1)
    with pytest.raises(ValueError):
        schedule.make_schedule(10, 11)
    with pytest.raises(ValueError):
        schedule.make_schedule(10, 2, "weird")
    with pytest.raises(ValueError):
        schedule.make_schedule(3, 1, betas=[0.1, 0.2])
    with pytest.raises(ValueError):
        schedule.make_schedule(2, 1, betas=[0.0, 0.5])
    with pytest.raises(ValueError):
        schedule.make_schedule(2, 1, betas=[0.5, 1.0])


@settings(max_examples=60, deadline=None)
@given(T=st.integers(2, 2000), n=st.integers(1, 60))
def test_sampler_subsequence_properties(T, n):
    if n > T:
        n = T
    steps = schedule.sampler_subsequence(T, n)
    assert len(steps) == n
    assert steps[0] == T - 1
    if n >= 2:
        assert steps[-1] == 0
        assert np.all(np.diff(steps) < 0)
    assert np.all(steps >= 0)
    assert np.all(steps < T)


def test_schedule_is_frozen():
    sched = make_small()
    with pytest.raises(Exception):
        sched.num_train_steps = 7
