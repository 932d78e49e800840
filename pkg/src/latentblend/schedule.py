"""Noise schedules and diffusion-time arithmetic.

A schedule owns the beta / cumulative-alpha tables for T training steps plus
the strictly decreasing subsequence of steps used by the deterministic
sampler at inference. The terminal "clean" level (cumulative alpha == 1) is
denoted by t=None: stepping into it returns the one-step clean estimate, and
noising to it is the identity.
"""

from dataclasses import dataclass, field

import numpy as np

BETA_SPECS = ("linear", "cosine")

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha-bar tables plus the inference step subsequence."""

    num_train_steps: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    sampler_steps: np.ndarray
    beta_spec: str = "linear"
    _sqrt_ab: np.ndarray = field(init=False, repr=False)
    _sqrt_1mab: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ab = np.asarray(self.alpha_bars, dtype=np.float64)
        object.__setattr__(self, "_sqrt_ab", np.sqrt(ab))
        object.__setattr__(self, "_sqrt_1mab", np.sqrt(1.0 - ab))

    # -- level coefficients -------------------------------------------------

    def _coeffs(self, t):
        """(sqrt(abar_t), sqrt(1-abar_t)) as float64; t=None is the clean level."""
        if t is None:
            return 1.0, 0.0
        t = int(t)
        if not 0 <= t < self.num_train_steps:
            raise ValueError(f"step index {t} outside schedule of {self.num_train_steps} steps")
        return self._sqrt_ab[t], self._sqrt_1mab[t]

    def alpha_bar(self, t) -> float:
        if t is None:
            return 1.0
        return float(self.alpha_bars[int(t)])

    # -- operations ---------------------------------------------------------

    def noise(self, z0, t, eps=None, rng=None):
        """Noise a clean latent to level t in one shot: sqrt(ab)*z0 + sqrt(1-ab)*eps.

        Arithmetic runs in float64 (the 1/sqrt(abar) factors amplify rounding
        at high t) and the result is rounded once to float32.
        """
        z0 = np.asarray(z0, dtype=np.float32)
        a, b = self._coeffs(t)
        if eps is None:
            rng = rng if rng is not None else np.random.default_rng()
            eps = rng.standard_normal(z0.shape, dtype=np.float32)
        else:
            eps = np.asarray(eps, dtype=np.float32)
            if eps.shape != z0.shape:
                raise ValueError(f"eps shape {eps.shape} != latent shape {z0.shape}")
        out = a * z0.astype(np.float64) + b * eps.astype(np.float64)
        return out.astype(np.float32)

    def estimate_z0(self, zt, eps_pred, t):
        """One-step clean estimate: (zt - sqrt(1-ab)*eps_pred) / sqrt(ab)."""
        zt = np.asarray(zt, dtype=np.float32)
        eps_pred = np.asarray(eps_pred, dtype=np.float32)
        if eps_pred.shape != zt.shape:
            raise ValueError(f"eps_pred shape {eps_pred.shape} != latent shape {zt.shape}")
        a, b = self._coeffs(t)
        out = (zt.astype(np.float64) - b * eps_pred.astype(np.float64)) / a
        return out.astype(np.float32)

    def sampler_step(self, zt, eps_pred, t, t_next):
        """Deterministic update from level t to t_next (t_next=None terminates)."""
        if t is None:
            raise ValueError("cannot step from the clean level")
        if t_next is not None and int(t_next) >= int(t):
            raise ValueError(f"invalid step pair: t={t} -> t_next={t_next}")
        zt = np.asarray(zt, dtype=np.float32)
        eps_pred = np.asarray(eps_pred, dtype=np.float32)
        if eps_pred.shape != zt.shape:
            raise ValueError(f"eps_pred shape {eps_pred.shape} != latent shape {zt.shape}")
        a, b = self._coeffs(t)
        # keep the clean estimate in float64 so it is rounded only once
        z0_est = (zt.astype(np.float64) - b * eps_pred.astype(np.float64)) / a
        a_next, b_next = self._coeffs(t_next)
        out = a_next * z0_est + b_next * eps_pred.astype(np.float64)
        return out.astype(np.float32)

    def sampler_step_stochastic(self, zt, eps_pred, t, t_next, eta, rng):
        """DDIM-eta update; eta=0 reduces to sampler_step, eta=1 is DDPM-like."""
        if eta == 0.0:
            return self.sampler_step(zt, eps_pred, t, t_next)
        if t is None:
            raise ValueError("cannot step from the clean level")
        if t_next is not None and int(t_next) >= int(t):
            raise ValueError(f"invalid step pair: t={t} -> t_next={t_next}")
        ab_t = self.alpha_bar(t)
        ab_n = self.alpha_bar(t_next)
        var = (1.0 - ab_n) / (1.0 - ab_t) * (1.0 - ab_t / ab_n)
        sigma = eta * np.sqrt(max(var, 0.0))
        dir_coeff = np.sqrt(max(1.0 - ab_n - sigma**2, 0.0))
        z0_est = self.estimate_z0(zt, eps_pred, t)
        out = np.float32(np.sqrt(ab_n)) * z0_est
        out += np.float32(dir_coeff) * np.asarray(eps_pred, dtype=np.float32)
        if sigma > 0.0:
            out += np.float32(sigma) * rng.standard_normal(zt.shape, dtype=np.float32)
        return out


def _beta_table(num_train_steps: int, beta_spec: str) -> np.ndarray:
    if beta_spec == "linear":
        return np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, num_train_steps)
    if beta_spec == "cosine":
        s = 0.008
        ts = np.arange(num_train_steps + 1, dtype=np.float64) / num_train_steps
        f = np.cos((ts + s) / (1.0 + s) * np.pi / 2.0) ** 2
        abar = f / f[0]
        betas = 1.0 - abar[1:] / abar[:-1]
        return np.clip(betas, 1e-8, 0.999)
    raise ValueError(f"unknown beta_spec {beta_spec!r}, expected one of {BETA_SPECS}")


def sampler_subsequence(num_train_steps: int, num_sampler_steps: int) -> np.ndarray:
    """Evenly spaced strictly decreasing step indices from T-1 down to 0."""
    if num_sampler_steps == 1:
        return np.array([num_train_steps - 1], dtype=np.int64)
    steps = np.round(np.linspace(num_train_steps - 1, 0, num_sampler_steps)).astype(np.int64)
    if not np.all(np.diff(steps) < 0):
        raise AssertionError("sampler steps are not strictly decreasing")
    return steps


def make_schedule(num_train_steps: int, num_sampler_steps: int,
                  beta_spec: str = "linear", betas=None) -> NoiseSchedule:
    """Build a schedule; sampler steps are an even stride from T-1 down to 0.

    An explicit beta table may be passed for testing; it overrides beta_spec.
    """
    if num_train_steps <= 0 or num_sampler_steps <= 0:
        raise ValueError("step counts must be positive")
    if num_sampler_steps > num_train_steps:
        raise ValueError("cannot use more sampler steps than train steps")
    if betas is None:
        betas = _beta_table(num_train_steps, beta_spec)
    else:
        betas = np.asarray(betas, dtype=np.float64)
        if betas.shape != (num_train_steps,):
            raise ValueError("explicit beta table has wrong length")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValueError("betas must lie in (0, 1)")
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(
        num_train_steps=num_train_steps,
        betas=betas,
        alpha_bars=alpha_bars,
        sampler_steps=sampler_subsequence(num_train_steps, num_sampler_steps),
        beta_spec=beta_spec,
    )


def default_schedule(num_sampler_steps: int = 50) -> NoiseSchedule:
    """T=1000 linear-beta schedule with the given number of sampler steps."""
    return make_schedule(1000, num_sampler_steps, "linear")
