"""Forward corruption, x0 estimation and (guided) ancestral sampling."""

from __future__ import annotations

from typing import Callable, Protocol

import numpy as np

from .schedule import NoiseSchedule

MODEL_RANGE = (-1.0, 1.0)


class Denoiser(Protocol):
    """Anything that predicts the noise in x_t at timestep t (1..T)."""

    def predict_eps(self, x_t: np.ndarray, t: int) -> np.ndarray: ...


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent RNG stream ``index`` derived from a job seed.

    Stream 0 drives the (guided) trajectory, 1..k the referred trajectories;
    networks draw their initial weights from higher indices.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _check_same(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what}: shape mismatch {np.shape(a)} vs {np.shape(b)}")


def q_sample(x0, t: int, eps, sched: NoiseSchedule):
    """Jump straight from x0 to x_t."""
    _check_same(x0, eps, "q_sample")
    if not 0 <= t <= sched.T:
        raise ValueError(f"timestep {t} outside 0..{sched.T}")
    abar = float(sched.alpha_bars[t])
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def estimate_x0(x_t, eps_hat, t: int, sched: NoiseSchedule, clip: bool = True):
    """One-shot clean estimate from x_t and predicted noise, clamped to model range."""
    _check_same(x_t, eps_hat, "estimate_x0")
    sched.check_t(t)
    abar = float(sched.alpha_bars[t])
    x0 = (x_t - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)
    return np.clip(x0, *MODEL_RANGE) if clip else x0


def posterior_mean(x_t, x0_hat, t: int, sched: NoiseSchedule):
    _check_same(x_t, x0_hat, "posterior_mean")
    if t == 0:
        raise ValueError("posterior mean is undefined at t=0")
    c0, ct = sched.mean_coefficients(t)
    return c0 * x0_hat + ct * x_t


def _add_noise(mu, t: int, sched: NoiseSchedule, rng: np.random.Generator):
    var = float(sched.posterior_variances[t])
    if t == 1 or var == 0.0:
        return mu
    z = rng.standard_normal(np.shape(mu)).astype(mu.dtype, copy=False)
    return mu + np.sqrt(var) * z


def sample_step(x_t, x0_hat, t: int, sched: NoiseSchedule, rng: np.random.Generator):
    """Draw x_{t-1} ~ N(mu(x_t, x0_hat), beta_tilde_t). No noise is drawn at t=1."""
    return _add_noise(posterior_mean(x_t, x0_hat, t, sched), t, sched, rng)


def guided_sample_step(x_t, x0_hat, t: int, sched: NoiseSchedule, G, s: float, rng: np.random.Generator):
    """As :func:`sample_step`, with the mean shifted by ``-s * beta_tilde_t * G``.

    ``G`` is the gradient of a loss, so the shift moves against it.
    """
    _check_same(x_t, G, "guided_sample_step")
    mu = posterior_mean(x_t, x0_hat, t, sched)
    mu = mu - (s * float(sched.posterior_variances[t])) * G
    return _add_noise(mu, t, sched, rng)


def ddpm_sample(
    denoiser: Denoiser,
    sched: NoiseSchedule,
    x_T: np.ndarray,
    rng: np.random.Generator,
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Plain unguided reverse sampling from ``x_T`` down to x_0."""
    x = x_T
    for t in range(sched.T, 0, -1):
        x0_hat = estimate_x0(x, denoiser.predict_eps(x, t), t, sched)
        x = sample_step(x, x0_hat, t, sched, rng)
        if callback is not None:
            callback(t, x, x0_hat)
    return x


def unguided_sample(denoiser: Denoiser, sched: NoiseSchedule, shape, seed: int) -> np.ndarray:
    """Unguided sample using the same RNG stream the restoration's guided trajectory uses."""
    rng = stream(seed, 0)
    x_T = rng.standard_normal(shape).astype(np.float32)
    return ddpm_sample(denoiser, sched, x_T, rng)
