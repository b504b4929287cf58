"""Test-time degradation modeling.

A small network ``phi`` is trained during reverse sampling to map the
current clean estimates into the degradation domain of the observed image
``y``: reconstruction and perceptual terms keep content, an adversarial term
against a domain discriminator pulls the output towards ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradtape as gt
from .gradtape import Conv2d, Module, Tensor

SLOPE = 0.2


class TdmError(RuntimeError):
    pass


class DegradationNet(Module):
    """Four 3x3 conv layers (3-16-16-16-3) with leaky-ReLU in between.

    With ``residual`` the conv stack predicts a correction added to the input.
    The output is clamped to the model range.
    """

    def __init__(self, channels=3, width=16, rng=None, residual=True, init_scale=0.1):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.residual = residual
        self.layers = [
            Conv2d(channels, width, rng=rng),
            Conv2d(width, width, rng=rng),
            Conv2d(width, width, rng=rng),
            Conv2d(width, channels, rng=rng, scale=init_scale if residual else 1.0),
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = gt.leaky_relu(h, SLOPE)
        if self.residual:
            h = h + x
        return gt.clamp(h, -1.0, 1.0)


class DomainDiscriminator(Module):
    """Strided conv stack -> global mean -> sigmoid; one probability per item, shape (N, 1, 1, 1)."""

    def __init__(self, channels=3, width=16, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = [
            Conv2d(channels, width, stride=2, rng=rng),
            Conv2d(width, 2 * width, stride=2, rng=rng),
            Conv2d(2 * width, 2 * width, stride=2, rng=rng),
            Conv2d(2 * width, 1, rng=rng),
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = gt.leaky_relu(h, SLOPE)
        return gt.sigmoid(gt.spatial_mean(h))


class FeatureExtractor(Module):
    """Fixed random conv+ReLU stack used for perceptual distances. Never trained."""

    def __init__(self, channels=3, width=16, n_layers=3, seed=1234):
        rng = np.random.default_rng(seed)
        self.seed = seed
        chans = [channels] + [width] * n_layers
        self.layers = [Conv2d(chans[i], chans[i + 1], rng=rng) for i in range(n_layers)]
        self.set_requires_grad(False)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for layer in self.layers:
            h = gt.relu(layer(h))
        return h


@dataclass(frozen=True)
class TdmConfig:
    lambdas: tuple = (1.0, 0.1, 0.01)
    lr: float = 1e-3
    steps: int = 1
    reinit_each_timestep: bool = False
    phi_residual: bool = False
    phi_init_scale: float = 0.1

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        if len(lam) != 3 or any(v < 0 for v in lam):
            raise ValueError(f"lambdas must be three non-negative numbers, got {self.lambdas}")
        if not any(v > 0 for v in lam):
            raise ValueError("at least one lambda must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        object.__setattr__(self, "lambdas", lam)


def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def stack_estimates(x0g, x0r):
    """Batch-concatenate the guided estimate with the referred estimates (if any)."""
    x0g = _t(x0g)
    if x0r is None or np.shape(getattr(x0r, "data", x0r))[0] == 0:
        return x0g
    return gt.concat_batch(x0g, _t(x0r))


def tdm_losses(x0g, x0r, y, phi, D, V, cfg: TdmConfig) -> dict:
    """Reconstruction, perceptual, adversarial and total degradation losses (as Tensors)."""
    batch = stack_estimates(x0g, x0r)
    if batch.shape[1:] != np.shape(y)[1:]:
        raise gt.ShapeError(f"tdm_losses: estimates {batch.shape} vs observation {np.shape(y)}")
    out = phi(batch)
    l_rec = gt.mse(batch, out)
    l_pec = gt.mse(V(batch), V(out))
    l_gan = gt.log_loss_terms(D(out), "log_1md")
    l1, l2, l3 = cfg.lambdas
    terms = [(w, l) for w, l in ((l1, l_rec), (l2, l_pec), (l3, l_gan)) if w > 0]
    total = terms[0][1] * terms[0][0]
    for w, l in terms[1:]:
        total = total + l * w
    return {"L_rec": l_rec, "L_pec": l_pec, "L_gan": l_gan, "L_phi": total, "phi_out": out}


def discriminator_loss(y, phi_out, D) -> Tensor:
    """-log D(y) - log(1 - D(phi_out)); ``y`` is real, ``phi_out`` is fake."""
    y, phi_out = _t(y), _t(phi_out)
    if y.shape[1:] != phi_out.shape[1:]:
        raise gt.ShapeError(f"discriminator_loss: {y.shape} vs {phi_out.shape}")
    return gt.neg(gt.log_loss_terms(D(y), "log_d")) - gt.log_loss_terms(D(phi_out), "log_1md")


def _check_finite(value: float, name: str, t):
    if not np.isfinite(value):
        raise TdmError(f"non-finite {name} ({value}) at timestep {t}")


def tdm_step(x0g, x0r, y, phi, D, V, cfg: TdmConfig, phi_state, d_state, t=None) -> dict:
    """``cfg.steps`` rounds of: one Adam step on phi, then one on D.

    Estimates enter as constants; nothing flows back into them. Returns the
    loss values of the last round (empty dict when ``cfg.steps == 0``).
    """
    record = {}
    x0g = np.asarray(getattr(x0g, "data", x0g))
    x0r = None if x0r is None else np.asarray(getattr(x0r, "data", x0r))
    y = Tensor(np.asarray(getattr(y, "data", y)))
    for name, arr in (("guided estimate", x0g), ("referred estimate", x0r), ("observation", y.data)):
        if arr is not None and not np.all(np.isfinite(arr)):
            raise TdmError(f"non-finite {name} at timestep {t}")
    phi_params, d_params = phi.params(), D.params()
    for _ in range(cfg.steps):
        with D.frozen():
            losses = tdm_losses(Tensor(x0g), None if x0r is None else Tensor(x0r), y, phi, D, V, cfg)
        for name in ("L_rec", "L_pec", "L_gan", "L_phi"):
            record[name] = losses[name].item()
            _check_finite(record[name], name, t)
        grads = gt.backward(losses["L_phi"], phi_params)
        gt.adam_step(phi_params, grads, phi_state)

        l_dis = discriminator_loss(y, losses["phi_out"].detach(), D)
        record["L_dis"] = l_dis.item()
        _check_finite(record["L_dis"], "L_dis", t)
        gt.adam_step(d_params, gt.backward(l_dis, d_params), d_state)
    return record


class TestTimeDegradation:
    """Degradation net, domain discriminator and their optimizer states for one job."""

    __test__ = False  # not a pytest class

    def __init__(self, cfg: TdmConfig, seed: int = 0, channels: int = 3, V: FeatureExtractor | None = None):
        self.cfg = cfg
        self.seed = seed
        self.channels = channels
        self.V = V if V is not None else FeatureExtractor(channels)
        self.reset()

    def reset(self):
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(100,)))
        self.phi = DegradationNet(
            self.channels, rng=rng, residual=self.cfg.phi_residual, init_scale=self.cfg.phi_init_scale
        )
        self.D = DomainDiscriminator(self.channels, rng=rng)
        self.phi_state = gt.AdamState.for_params(self.phi.params(), lr=self.cfg.lr)
        self.d_state = gt.AdamState.for_params(self.D.params(), lr=self.cfg.lr)

    def step(self, x0g, x0r, y, t=None) -> dict:
        if self.cfg.reinit_each_timestep:
            self.reset()
        return tdm_step(x0g, x0r, y, self.phi, self.D, self.V, self.cfg, self.phi_state, self.d_state, t)

    def degrade(self, x) -> np.ndarray:
        """Apply the current degradation net to an array (no graph kept)."""
        with self.phi.frozen():
            return self.phi(Tensor(x)).data


def train_standalone(clean, degraded, cfg: TdmConfig, steps: int, seed: int = 0, n_referred: int = 1):
    """Run TDM on fixed clean batches against a fixed degraded target.

    The first image of ``clean`` plays the guided estimate, the next
    ``n_referred`` the referred ones, and ``degraded[:1]`` is the target.
    Returns (TestTimeDegradation, list of per-step loss records).
    """
    tdm = TestTimeDegradation(cfg, seed=seed, channels=clean.shape[1])
    x0g = clean[:1]
    x0r = clean[1 : 1 + n_referred] if n_referred else None
    y = degraded[:1]
    history = [tdm.step(x0g, x0r, y, t=i) for i in range(steps)]
    return tdm, history
