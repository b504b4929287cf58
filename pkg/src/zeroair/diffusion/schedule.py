from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-timestep DDPM tables, indexed by t in 1..T.

    Index 0 holds the conventions beta_0 = 0 and alpha_bar_0 = 1, so every
    table has length T + 1 and ``table[t]`` reads naturally.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_variances: np.ndarray

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 2:
            raise ValueError("need at least two betas")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        T = betas.size
        b = np.concatenate([[0.0], betas])
        a = 1.0 - b
        abar = np.cumprod(a)
        post = np.zeros(T + 1)
        post[1:] = (1.0 - abar[:-1]) / (1.0 - abar[1:]) * b[1:]
        for arr in (b, a, abar, post):
            arr.setflags(write=False)
        return cls(T, b, a, abar, post)

    def check_t(self, t: int):
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 1..{self.T}")

    def mean_coefficients(self, t: int) -> tuple[float, float]:
        """Coefficients of x0_hat and x_t in the posterior mean at step t."""
        self.check_t(t)
        abar, abar_prev = self.alpha_bars[t], self.alpha_bars[t - 1]
        c0 = np.sqrt(abar_prev) * self.betas[t] / (1.0 - abar)
        ct = np.sqrt(self.alphas[t]) * (1.0 - abar_prev) / (1.0 - abar)
        return float(c0), float(ct)


def build_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    if T < 2:
        raise ValueError(f"T must be at least 2, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T))
