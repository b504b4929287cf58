"""One full restoration: TDM and stage-dependent guidance alternate at every reverse step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradtape as gt
from .diffusion import MODEL_RANGE, NoiseSchedule, estimate_x0, guided_sample_step, sample_step, stream
from .gradtape import Tensor
from .tdg import (
    GuidanceConfig,
    ResidualDiscriminator,
    Stage,
    guidance_stage1,
    guidance_stage2,
    guidance_stage3,
    stage_of,
)
from .tdm import FeatureExtractor, TdmConfig, TestTimeDegradation

TASKS = ("dehaze", "lowlight", "denoise")
VARIANTS = ("UG", "minusFS", "minusSS", "minusTS", "TDG")
VARIANT_LABELS = {"UG": "U.G.", "minusFS": "-F.S.", "minusSS": "-S.S.", "minusTS": "-T.S.", "TDG": "TDG"}
RESIDUAL_SEED_INDEX = 101


class RestorationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskPreset:
    """Loss weights for TDM (``lambdas``) and guidance (``gammas``) plus the guidance scale."""

    task: str
    lambdas: tuple
    gammas: tuple
    s: float

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        gam = tuple(float(v) for v in self.gammas)
        if len(lam) != 3 or len(gam) != 5:
            raise ValueError(f"preset {self.task}: need 3 lambdas and 5 gammas")
        if any(v < 0 for v in lam + gam):
            raise ValueError(f"preset {self.task}: weights must be non-negative")
        if not self.s > 0:
            raise ValueError(f"preset {self.task}: guidance scale must be positive, got {self.s}")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "gammas", gam)


# Weights for the full-scale 256x256 ImageNet model.
FULL_SCALE_PRESETS = {
    "dehaze": TaskPreset("dehaze", (0.2, 0.5, 0.2), (2, 1, 1e-3, 0, 1e-4), 25000),
    "lowlight": TaskPreset("lowlight", (0.05, 0.4, 0.5), (0, 1, 2e-3, 1e-4, 5e-5), 50000),
    "denoise": TaskPreset("denoise", (3, 5e-3, 1e-3), (1, 0.9, 0, 0, 5e-4), 5000),
}

# Same structure re-tuned for 32x32 images and mean-reduced losses.
TOY_PRESETS = {
    "dehaze": TaskPreset("dehaze", (0.2, 0.5, 0.2), (2, 1, 1e-3, 0, 1e-4), 20000),
    "lowlight": TaskPreset("lowlight", (0.05, 0.4, 0.5), (1, 1, 2e-3, 1e-4, 5e-5), 20000),
    "denoise": TaskPreset("denoise", (3, 5e-3, 1e-3), (1, 0.9, 0, 0, 5e-4), 20000),
}


def preset(task: str, toy: bool = False) -> TaskPreset:
    table = TOY_PRESETS if toy else FULL_SCALE_PRESETS
    if task not in table:
        raise ValueError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    return table[task]


def effective_stage(stage: Stage, variant: str) -> Stage:
    """Stage rule actually applied under an ablation variant."""
    if variant == "TDG":
        return stage
    if variant == "UG":
        return Stage.FIRST
    if variant == "minusFS":
        return Stage.SECOND if stage == Stage.FIRST else stage
    if variant == "minusSS":
        return Stage.FIRST if stage == Stage.SECOND else stage
    if variant == "minusTS":
        return Stage.SECOND if stage == Stage.THIRD else stage
    raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")


@dataclass
class StepRecord:
    t: int
    stage: str
    g_norm: float
    losses: dict = field(default_factory=dict)

    def line(self) -> str:
        parts = [f"t={self.t}", f"stage={self.stage}", f"g_norm={self.g_norm:.6e}"]
        parts += [f"{k}={v:.6e}" for k, v in sorted(self.losses.items())]
        return " ".join(parts)


@dataclass
class RestoreResult:
    image: np.ndarray
    telemetry: list
    tdm: TestTimeDegradation
    final_state: np.ndarray
    referred: np.ndarray | None = None


def _check_finite(arr, name, t):
    if not np.all(np.isfinite(arr)):
        raise RestorationError(f"non-finite {name} at timestep {t}")


def _validate_input(y, k_referred):
    y = np.array(y, dtype=np.float32, copy=True)
    if y.ndim != 4 or y.shape[0] != 1:
        raise ValueError(f"restore expects one image shaped (1, C, H, W), got {y.shape}")
    _check_finite(y, "input", None)
    lo, hi = MODEL_RANGE
    if y.min() < lo - 1e-6 or y.max() > hi + 1e-6:
        raise ValueError(f"input must lie in model range {MODEL_RANGE}, got [{y.min():.4f}, {y.max():.4f}]")
    if k_referred < 0:
        raise ValueError(f"k_referred must be >= 0, got {k_referred}")
    return y


def restore(
    y,
    denoiser,
    sched: NoiseSchedule,
    task_preset: TaskPreset,
    k_referred: int = 1,
    seed: int = 0,
    variant: str = "TDG",
    b1: int | None = None,
    b2: int | None = None,
    s: float | None = None,
    tdm_cfg: TdmConfig | None = None,
    guide_referred_all_stages: bool = False,
    feature_seed: int = 1234,
    sink=None,
    callback=None,
) -> RestoreResult:
    """Restore ``y`` (model range, shape (1, C, H, W)) with a frozen denoiser.

    ``s`` overrides the preset's guidance scale (``0`` disables guidance).
    ``sink`` is an optional text stream receiving one telemetry line per timestep;
    ``callback(t, x_prev, x0_hat)`` sees the guided trajectory after every step.
    """
    effective_stage(Stage.FIRST, variant)
    y = _validate_input(y, k_referred)
    shape = y.shape
    gcfg = GuidanceConfig(
        T=sched.T,
        b1=b1,
        b2=b2,
        gammas=task_preset.gammas,
        s=task_preset.s if s is None else float(s),
        guide_referred_all_stages=guide_referred_all_stages,
    )
    tcfg = tdm_cfg if tdm_cfg is not None else TdmConfig(lambdas=task_preset.lambdas)
    V = FeatureExtractor(shape[1], seed=feature_seed)
    tdm = TestTimeDegradation(tcfg, seed=seed, channels=shape[1], V=V)
    dres = ResidualDiscriminator(shape[1], rng=stream(seed, RESIDUAL_SEED_INDEX))
    dres_state = gt.AdamState.for_params(dres.params(), lr=gcfg.dres_lr)
    Vy = V(Tensor(y)) if gcfg.gammas[2] > 0 else None

    rng_g = stream(seed, 0)
    xg = rng_g.standard_normal(shape).astype(np.float32)
    rng_r = [stream(seed, j + 1) for j in range(k_referred)]
    xr = np.concatenate([r.standard_normal(shape).astype(np.float32) for r in rng_r]) if k_referred else None

    telemetry = []
    for t in range(sched.T, 0, -1):
        x0g = estimate_x0(xg, denoiser.predict_eps(xg, t), t, sched)
        x0r = estimate_x0(xr, denoiser.predict_eps(xr, t), t, sched) if k_referred else None
        _check_finite(x0g, "guided estimate", t)
        if x0r is not None:
            _check_finite(x0r, "referred estimate", t)

        losses = tdm.step(x0g, x0r, y, t)
        stage = effective_stage(stage_of(t - 1, gcfg), variant)
        Gr = None
        if stage == Stage.FIRST:
            batch = x0g if x0r is None else np.concatenate([x0g, x0r])
            G, extra = guidance_stage1(batch, y, tdm.phi, gcfg.gammas[0], t)
            Gg, Gr = G[:1], (G[1:] if x0r is not None else None)
        else:
            rule = guidance_stage2 if stage == Stage.SECOND else guidance_stage3
            Gg, extra = rule(x0g, x0r, y, tdm.phi, V, dres, gcfg, dres_state, t, Vy)
            if x0r is not None and gcfg.guide_referred_all_stages:
                Gr, _ = guidance_stage1(x0r, y, tdm.phi, gcfg.gammas[0], t)
        losses.update(extra)

        xg = guided_sample_step(xg, x0g, t, sched, Gg.astype(xg.dtype, copy=False), gcfg.s, rng_g)
        if k_referred:
            rows = []
            for j in range(k_referred):
                if Gr is None:
                    rows.append(sample_step(xr[j : j + 1], x0r[j : j + 1], t, sched, rng_r[j]))
                else:
                    G_j = Gr[j : j + 1].astype(xr.dtype, copy=False)
                    rows.append(guided_sample_step(xr[j : j + 1], x0r[j : j + 1], t, sched, G_j, gcfg.s, rng_r[j]))
            xr = np.concatenate(rows)
            _check_finite(xr, "referred trajectory", t)
        _check_finite(xg, "guided trajectory", t)

        rec = StepRecord(t, stage.name, float(np.linalg.norm(Gg)), losses)
        telemetry.append(rec)
        if sink is not None:
            sink.write(rec.line() + "\n")
        if callback is not None:
            callback(t, xg, x0g)

    image = np.clip(xg, *MODEL_RANGE)
    return RestoreResult(image=image, telemetry=telemetry, tdm=tdm, final_state=xg, referred=xr)


def ablate(y, denoiser, sched, task_preset, variant: str, seed: int = 0, **kwargs) -> np.ndarray:
    """Restoration under one ablation variant; returns the restored image."""
    return restore(y, denoiser, sched, task_preset, seed=seed, variant=variant, **kwargs).image
