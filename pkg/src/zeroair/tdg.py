"""Three-stage diffusion guidance.

Each stage turns a scalar loss on the clean estimate into a gradient map
``G`` that the guided sampling step subtracts (scaled) from the posterior
mean. Network parameters are frozen while ``G`` is computed.
"""

from __future__ import annotations

import contextlib
import enum
from dataclasses import dataclass

import numpy as np

from . import gradtape as gt
from .gradtape import Tensor
from .tdm import DomainDiscriminator


class Stage(enum.IntEnum):
    FIRST = 1
    SECOND = 2
    THIRD = 3


class GuidanceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GuidanceConfig:
    """Stage bounds over timesteps 0..T-1 plus loss weights and guidance scale.

    Stage FIRST covers T-1..b1+1, SECOND b1..b2+1, THIRD b2..0; a bound
    belongs to the later stage. ``None`` bounds default to 0.6 T and 0.05 T
    (600 and 50 for T = 1000).
    """

    T: int = 1000
    b1: int | None = None
    b2: int | None = None
    gammas: tuple = (1.0, 1.0, 0.0, 0.0, 0.0)
    s: float = 1.0
    guide_referred_all_stages: bool = False
    dres_lr: float = 1e-3

    def __post_init__(self):
        b1 = round(0.6 * self.T) if self.b1 is None else int(self.b1)
        b2 = round(0.05 * self.T) if self.b2 is None else int(self.b2)
        if not self.T - 1 > b1 > b2 >= 0:
            raise ValueError(f"stage bounds must satisfy T-1 > b1 > b2 >= 0, got T={self.T}, b1={b1}, b2={b2}")
        g = tuple(float(v) for v in self.gammas)
        if len(g) != 5 or any(v < 0 for v in g):
            raise ValueError(f"gammas must be five non-negative numbers, got {self.gammas}")
        if self.s < 0:
            raise ValueError(f"guidance scale must be non-negative, got {self.s}")
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "b2", b2)
        object.__setattr__(self, "gammas", g)


def stage_of(t: int, cfg: GuidanceConfig) -> Stage:
    if not 0 <= t < cfg.T:
        raise ValueError(f"timestep {t} outside 0..{cfg.T - 1}")
    if t > cfg.b1:
        return Stage.FIRST
    if t > cfg.b2:
        return Stage.SECOND
    return Stage.THIRD


def tv_loss(x: Tensor) -> Tensor:
    """Anisotropic total variation: summed |forward differences| per image, averaged over the batch.

    Axes of length 1 contribute nothing.
    """
    terms = [gt.sum_(gt.abs_(gt.diff(x, ax))) for ax in (2, 3) if x.shape[ax] >= 2]
    if not terms:
        raise gt.ShapeError(f"tv_loss: no spatial axis of length >= 2 in {x.shape}")
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return total * (1.0 / x.shape[0])


@contextlib.contextmanager
def _frozen(*nets):
    with contextlib.ExitStack() as stack:
        for net in nets:
            if hasattr(net, "frozen"):
                stack.enter_context(net.frozen())
        yield


def _tile(y: np.ndarray, n: int) -> np.ndarray:
    return y if len(y) == n else np.repeat(y[:1], n, axis=0)


def _finite(G, t, what):
    if not np.all(np.isfinite(G)):
        raise GuidanceError(f"non-finite guidance ({what}) at timestep {t}")
    return G


def guidance_stage1(x0_hat, y, phi, gamma1: float, t=None):
    """G = gamma1 * grad ||y - phi(x0_hat)||^2 for each image of ``x0_hat``.

    Works on a batch of estimates; every image gets the gradient of its own
    mean squared error against ``y``.
    """
    x0_hat = np.asarray(x0_hat)
    if gamma1 == 0:
        return np.zeros_like(x0_hat), {"G_rec": 0.0}
    y = np.asarray(y)
    if y.shape[1:] != x0_hat.shape[1:]:
        raise gt.ShapeError(f"guidance_stage1: {x0_hat.shape} vs {y.shape}")
    n = len(x0_hat)
    x = Tensor(x0_hat, requires_grad=True)
    with _frozen(phi):
        loss = gt.mse(Tensor(_tile(y, n)), phi(x)) * float(n)
        (g,) = gt.backward(loss, [x])
    return _finite(gamma1 * g, t, "stage 1"), {"G_rec": loss.item() / n}


def _stage23(x0g_hat, y, phi, V, Dres, gammas, with_tv, t, Vy=None):
    x0g_hat = np.asarray(x0g_hat)
    y = np.asarray(y)
    if y.shape != x0g_hat.shape:
        raise gt.ShapeError(f"guidance: estimate {x0g_hat.shape} vs observation {y.shape}")
    _, g2, g3, g4, g5 = gammas
    x = Tensor(x0g_hat, requires_grad=True)
    yt = Tensor(y)
    terms = []
    if g2 > 0 or g3 > 0:
        out = phi(x)
        if g2 > 0:
            terms.append(("G_rec", g2, gt.mse(yt, out)))
        if g3 > 0:
            vy = Vy if Vy is not None else V(yt)
            terms.append(("G_pec", g3, gt.mse(vy, V(out))))
    if g4 > 0:
        terms.append(("G_adv", g4, gt.log_loss_terms(Dres(x - yt), "log_1md")))
    if with_tv and g5 > 0:
        terms.append(("G_tv", g5, tv_loss(x)))
    if not terms:
        return np.zeros_like(x0g_hat), {}
    total = terms[0][2] * terms[0][1]
    for _, w, term in terms[1:]:
        total = total + term * w
    (g,) = gt.backward(total, [x])
    return _finite(g, t, f"stage {3 if with_tv else 2}"), {name: term.item() for name, _, term in terms}


def residual_discriminator_step(x0g_hat, x0r_hat, y, phi, Dres, state, t=None) -> float:
    """One Adam step on the residual discriminator.

    Real samples are the information-loss residuals ``x - phi(x)`` of the
    stacked estimates; the fake sample is ``x0g_hat - y``.
    """
    from .tdm import stack_estimates

    with _frozen(phi):
        batch = stack_estimates(x0g_hat, x0r_hat)
        real = Tensor((batch - phi(batch)).data)
    fake = Tensor(np.asarray(x0g_hat) - np.asarray(y))
    loss = gt.neg(gt.log_loss_terms(Dres(real), "log_d")) - gt.log_loss_terms(Dres(fake), "log_1md")
    value = loss.item()
    if not np.isfinite(value):
        raise GuidanceError(f"non-finite residual-discriminator loss at timestep {t}")
    params = Dres.params()
    gt.adam_step(params, gt.backward(loss, params), state)
    return value


def guidance_stage2(x0g_hat, x0r_hat, y, phi, V, Dres, cfg: GuidanceConfig, dres_state=None, t=None, Vy=None):
    """Reconstruction + perceptual + adversarial-residual guidance on the guided estimate.

    When ``gamma4 > 0`` and ``dres_state`` is given, the residual
    discriminator is updated once after G is computed.
    """
    with _frozen(phi, V, Dres):
        G, losses = _stage23(x0g_hat, y, phi, V, Dres, cfg.gammas, False, t, Vy)
    if cfg.gammas[3] > 0 and dres_state is not None:
        losses["L_dres"] = residual_discriminator_step(x0g_hat, x0r_hat, y, phi, Dres, dres_state, t)
    return G, losses


def guidance_stage3(x0g_hat, x0r_hat, y, phi, V, Dres, cfg: GuidanceConfig, dres_state=None, t=None, Vy=None):
    """Stage-2 guidance plus gamma5 times the total-variation gradient."""
    with _frozen(phi, V, Dres):
        G, losses = _stage23(x0g_hat, y, phi, V, Dres, cfg.gammas, True, t, Vy)
    if cfg.gammas[3] > 0 and dres_state is not None:
        losses["L_dres"] = residual_discriminator_step(x0g_hat, x0r_hat, y, phi, Dres, dres_state, t)
    return G, losses


class ResidualDiscriminator(DomainDiscriminator):
    """Same architecture as the domain discriminator, fed with residual maps."""
