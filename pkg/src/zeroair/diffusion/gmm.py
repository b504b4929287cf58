"""Analytic Gaussian-mixture prior and its exact MMSE noise predictor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels
from .schedule import NoiseSchedule


@dataclass(frozen=True, eq=False)
class GmmPrior:
    """Mixture of diagonal Gaussians over arrays of shape ``event_shape``.

    ``means`` has shape (K, *event_shape); ``variances`` is either (K,) (one
    isotropic variance per component) or (K, *event_shape).
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or m.shape[0] != w.size:
            raise ValueError(f"{w.size} weights for {m.shape[0]} component means")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if v.ndim == 1:
            v = np.broadcast_to(v.reshape((-1,) + (1,) * (m.ndim - 1)), m.shape)
        if v.shape != m.shape:
            raise ValueError(f"variances {v.shape} do not match means {m.shape}")
        if np.any(v <= 0):
            raise ValueError("degenerate mixture component: variances must be strictly positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", np.ascontiguousarray(v))

    @property
    def event_shape(self):
        return self.means.shape[1:]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def sample(self, n: int, rng: np.random.Generator):
        """Draw ``n`` samples; returns (samples, component labels)."""
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n,) + self.event_shape)
        return self.means[labels] + np.sqrt(self.variances[labels]) * z, labels

    def nearest_component(self, x) -> np.ndarray:
        """Index of the component with the highest likelihood for each row of ``x``."""
        k = self.n_components
        flat = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        mu = self.means.reshape(k, -1)
        var = self.variances.reshape(k, -1)
        ll = np.log(self.weights)[None] - 0.5 * (
            np.log(var).sum(1)[None] + (((flat[:, None] - mu[None]) ** 2) / var[None]).sum(2)
        )
        return ll.argmax(axis=1)


def gmm_predict_eps(prior: GmmPrior, x_t, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Exact posterior-mean noise prediction under ``prior`` at timestep ``t``."""
    x_t = np.asarray(x_t)
    if x_t.shape[1:] != prior.event_shape:
        raise ValueError(f"x_t {x_t.shape} does not match prior event shape {prior.event_shape}")
    sched.check_t(t)
    abar = float(sched.alpha_bars[t])
    k = prior.n_components
    flat = np.ascontiguousarray(x_t.reshape(len(x_t), -1), dtype=np.float64)
    ex0 = _kernels.gmm_posterior_mean(
        flat,
        prior.means.reshape(k, -1),
        prior.variances.reshape(k, -1),
        np.log(np.maximum(prior.weights, 1e-300)),
        abar,
    )
    eps = (flat - np.sqrt(abar) * ex0) / np.sqrt(1.0 - abar)
    return eps.reshape(x_t.shape).astype(x_t.dtype if x_t.dtype.kind == "f" else np.float32)


class GmmDenoiser:
    """Denoiser backed by the analytic mixture posterior."""

    def __init__(self, prior: GmmPrior, sched: NoiseSchedule):
        self.prior = prior
        self.sched = sched

    def predict_eps(self, x_t, t):
        return gmm_predict_eps(self.prior, x_t, t, self.sched)
