"""Benchmark harness: per-task metric tables, the ablation table and the referred-count sweep.

Jobs are independent restorations; with ``workers > 1`` they run in a process
pool and results are merged back in input order.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .degrade import shapes32
from .diffusion import GmmDenoiser, GmmPrior, NoiseSchedule
from .metrics import MetricReport, to_unit_range
from .pipeline import VARIANT_LABELS, VARIANTS, TaskPreset, restore

K_SWEEP = (0, 1, 2, 3, 4)


def image_gmm_denoiser(shape, sched: NoiseSchedule, components: int = 4, variance: float = 0.01, seed: int = 0):
    """Analytic denoiser whose prior is an equal-weight mixture centred on shapes images (model range)."""
    c, h, w = shape[-3:]
    if c != 3 or h != w:
        raise ValueError(f"mixture prior needs square 3-channel images, got {shape}")
    means = shapes32(np.random.default_rng(seed), components, side=h) * 2.0 - 1.0
    prior = GmmPrior(np.full(components, 1.0 / components), means, np.full(components, variance))
    return GmmDenoiser(prior, sched)


@dataclass(frozen=True)
class Job:
    """One restoration of ``y`` (model range) with its clean reference (model range)."""

    y: np.ndarray
    clean: np.ndarray
    seed: int
    k_referred: int = 1
    variant: str = "TDG"


def _run(args):
    job, denoiser, sched, task_preset, kwargs = args
    result = restore(job.y, denoiser, sched, task_preset, k_referred=job.k_referred, seed=job.seed,
                     variant=job.variant, **kwargs)
    return result.image


def run_jobs(jobs, denoiser, sched, task_preset, workers: int = 1, **kwargs) -> list[np.ndarray]:
    """Restore every job; the returned list follows the order of ``jobs``."""
    payload = [(job, denoiser, sched, task_preset, kwargs) for job in jobs]
    if workers <= 1 or len(jobs) <= 1:
        return [_run(p) for p in payload]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run, payload))


def _report(images, refs) -> MetricReport:
    rep = MetricReport()
    for img, ref in zip(images, refs):
        rep.add(to_unit_range(img), to_unit_range(ref))
    return rep


def task_table(clean, degraded, denoiser, sched, task_preset: TaskPreset, seed=0, k_referred=1, workers=1, **kw):
    """Metrics of the degraded inputs and of their restorations.

    ``clean`` and ``degraded`` are (N, C, H, W) in model range. Image ``i``
    uses seed ``seed + i``. Returns (input report, restored report, restored images).
    """
    jobs = [Job(degraded[i : i + 1], clean[i : i + 1], seed + i, k_referred) for i in range(len(clean))]
    restored = run_jobs(jobs, denoiser, sched, task_preset, workers, **kw)
    before = _report([d[None] for d in degraded], [c[None] for c in clean])
    after = _report(restored, [c[None] for c in clean])
    return before, after, restored


def _mean_row(label, images, refs):
    rep = _report(images, refs)
    return [label, rep.mean_psnr, rep.mean_ssim]


def ablation_table(clean, degraded, denoiser, sched, task_preset, seed=0, workers=1, **kw):
    """One row per variant in table order: [label, mean PSNR, mean SSIM]."""
    n = len(clean)
    jobs = [Job(degraded[i : i + 1], clean[i : i + 1], seed + i, 1, v) for v in VARIANTS for i in range(n)]
    out = run_jobs(jobs, denoiser, sched, task_preset, workers, **kw)
    refs = [c[None] for c in clean]
    return [_mean_row(VARIANT_LABELS[v], out[j * n : (j + 1) * n], refs) for j, v in enumerate(VARIANTS)]


def referred_sweep(clean, degraded, denoiser, sched, task_preset, seed=0, workers=1, ks=K_SWEEP, **kw):
    """One row per referred count: [k, mean PSNR, mean SSIM]."""
    n = len(clean)
    jobs = [Job(degraded[i : i + 1], clean[i : i + 1], seed + i, k) for k in ks for i in range(n)]
    out = run_jobs(jobs, denoiser, sched, task_preset, workers, **kw)
    refs = [c[None] for c in clean]
    return [_mean_row(str(k), out[j * n : (j + 1) * n], refs) for j, k in enumerate(ks)]


def format_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.4f}"
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])


def metric_row(label, restored, reference) -> list:
    """[label, PSNR (capped), SSIM] for one pair of [0, 1] images; SSIM is NaN below the window size."""
    rep = MetricReport()
    rep.add(restored, reference)
    return [label, rep.mean_psnr, rep.ssim[0]]
