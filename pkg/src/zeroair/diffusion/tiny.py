"""Small convolutional encoder-decoder noise predictor and its trainer."""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from .. import gradtape as gt
from ..gradtape import Conv2d, Linear, Module, Tensor
from .sampling import q_sample
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

SLOPE = 0.1


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (len(t), dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class TinyDenoiser(Module):
    """Encoder-decoder with additive skips and per-level time-embedding biases.

    ``mults`` sets the number of levels and the channel multiplier of each;
    image sides must be divisible by ``2 ** (len(mults) - 1)``.
    """

    def __init__(self, base: int = 32, mults=(1, 2, 2), in_ch: int = 3, emb_dim: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = {"base": base, "mults": tuple(mults), "in_ch": in_ch, "emb_dim": emb_dim, "seed": seed}
        chs = [base * m for m in mults]
        self.chs = chs
        hidden = 2 * emb_dim
        self.temb = Linear(emb_dim, hidden, rng)
        self.inc = Conv2d(in_ch, chs[0], rng=rng)
        self.down, self.enc_a, self.enc_b, self.enc_t = [], [], [], []
        for i, c in enumerate(chs):
            if i > 0:
                self.down.append(Conv2d(chs[i - 1], c, stride=2, rng=rng))
            self.enc_a.append(Conv2d(c, c, rng=rng))
            self.enc_b.append(Conv2d(c, c, rng=rng))
            self.enc_t.append(Linear(hidden, c, rng))
        self.up, self.dec, self.dec_t = [], [], []
        for i in range(len(chs) - 2, -1, -1):
            self.up.append(Conv2d(chs[i + 1], chs[i], rng=rng))
            self.dec.append(Conv2d(chs[i], chs[i], rng=rng))
            self.dec_t.append(Linear(hidden, chs[i], rng))
        self.out = Conv2d(chs[0], in_ch, rng=rng, scale=0.1)
        self.layers = (
            [self.temb, self.inc]
            + self.down
            + self.enc_a
            + self.enc_b
            + self.enc_t
            + self.up
            + self.dec
            + self.dec_t
            + [self.out]
        )

    def forward(self, x: Tensor, t) -> Tensor:
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (n,))
        emb = gt.relu(self.temb(Tensor(timestep_embedding(t, self.config["emb_dim"]))))
        act = lambda z: gt.leaky_relu(z, SLOPE)  # noqa: E731
        h = self.inc(x)
        skips = []
        for i in range(len(self.chs)):
            if i > 0:
                h = act(self.down[i - 1](h))
            h = act(gt.add_channel_bias(self.enc_a[i](h), self.enc_t[i](emb)))
            h = act(self.enc_b[i](h))
            skips.append(h)
        skips.pop()
        for up, dec, dec_t in zip(self.up, self.dec, self.dec_t):
            h = act(up(gt.upsample2x(h))) + skips.pop()
            h = act(gt.add_channel_bias(dec(h), dec_t(emb)))
        return self.out(h)

    def predict_eps(self, x_t, t) -> np.ndarray:
        return self.forward(Tensor(x_t), t).data


def _batch_source(dataset) -> Callable[[np.random.Generator, int], np.ndarray]:
    if callable(dataset):
        return dataset
    data = np.asarray(dataset, dtype=np.float32)
    if data.ndim != 4 or len(data) == 0:
        raise ValueError("dataset must be a non-empty (N, C, H, W) array or a batch callable")
    if data.min() < -1.0 - 1e-6 or data.max() > 1.0 + 1e-6:
        raise ValueError("dataset values must lie in the model range [-1, 1]")
    return lambda rng, n: data[rng.integers(0, len(data), size=n)]


def train_tiny_denoiser(
    dataset,
    sched: NoiseSchedule,
    steps: int,
    rng: np.random.Generator,
    model: TinyDenoiser | None = None,
    batch_size: int = 16,
    lr: float = 2e-3,
    ema_decay: float = 0.995,
    log_every: int = 0,
):
    """Fit a noise predictor with the epsilon-matching objective.

    ``dataset`` is either an (N, C, H, W) array in [-1, 1] or a callable
    ``(rng, n) -> batch``. Returns ``(model, losses)``; the returned model
    carries the exponential moving average of the weights when
    ``ema_decay > 0``.
    """
    source = _batch_source(dataset)
    if model is None:
        model = TinyDenoiser()
    params = model.params()
    state = gt.AdamState.for_params(params, lr=lr)
    ema = [p.data.copy() for p in params] if ema_decay > 0 else None
    losses = []
    for step in range(steps):
        x0 = np.asarray(source(rng, batch_size), dtype=np.float32)
        t = rng.integers(1, sched.T + 1, size=len(x0))
        eps = rng.standard_normal(x0.shape).astype(np.float32)
        abar = sched.alpha_bars[t].astype(np.float32)[:, None, None, None]
        x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
        loss = gt.mse(model.forward(Tensor(x_t), t), Tensor(eps))
        grads = gt.backward(loss, params)
        gt.adam_step(params, grads, state)
        if ema is not None:
            for e, p in zip(ema, params):
                e *= ema_decay
                e += (1.0 - ema_decay) * p.data
        losses.append(loss.item())
        if log_every and (step + 1) % log_every == 0:
            log.info("denoiser step %d loss %.4f", step + 1, np.mean(losses[-log_every:]))
    if ema is not None and steps > 0:
        for e, p in zip(ema, params):
            p.data = e
    return model, np.asarray(losses)


__all__ = ["TinyDenoiser", "q_sample", "timestep_embedding", "train_tiny_denoiser"]
