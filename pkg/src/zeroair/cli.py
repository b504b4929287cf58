"""Command-line entry point.

Every command reads a flat ``key = value`` config (``--config``) and accepts
``--set key=value`` overrides. Exit codes: 0 success, 1 internal failure,
2 bad input.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, apply_overrides, load_config, parse_lines
from .degrade import DegradationError, DegradationSpec, make_dataset
from .diffusion import build_linear_schedule, train_tiny_denoiser
from .diffusion.tiny import TinyDenoiser
from .harness import (
    ablation_table,
    image_gmm_denoiser,
    metric_row,
    referred_sweep,
    task_table,
    write_csv,
)
from .metrics import to_unit_range
from .pipeline import VARIANT_LABELS, VARIANTS, TaskPreset, preset, restore

EXIT_OK, EXIT_INTERNAL, EXIT_BAD_INPUT = 0, 1, 2
METRIC_HEADER = ["label", "psnr", "ssim"]


class InputError(ValueError):
    """Bad user input detected by a command."""


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _task_preset(cfg: RunConfig) -> TaskPreset:
    base = preset(cfg.task, toy=cfg.toy)
    return TaskPreset(
        base.task,
        cfg.lambdas or base.lambdas,
        cfg.gammas or base.gammas,
        base.s if cfg.s is None else cfg.s,
    )


def _denoiser(cfg: RunConfig, shape):
    """Returns (denoiser, schedule) for an image of ``shape``."""
    if cfg.denoiser == "gmm":
        sched = build_linear_schedule(cfg.T)
        return image_gmm_denoiser(shape, sched, cfg.gmm_components, cfg.gmm_variance, cfg.gmm_seed), sched
    path = Path(cfg.denoiser)
    if not path.is_file():
        raise FileNotFoundError(f"denoiser file not found: {path}")
    return io.load_denoiser(path)


def _model_range(img):
    return (np.asarray(img, dtype=np.float32) * 2.0 - 1.0).astype(np.float32)


def _read_input(path_text: str, what: str):
    if not path_text:
        raise InputError(f"{what}: no path given")
    path = Path(path_text)
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return io.read_image(path)


def _restore_kwargs(cfg: RunConfig) -> dict:
    return {"b1": cfg.b1, "b2": cfg.b2}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_make_data(cfg: RunConfig):
    spec = DegradationSpec(
        kind=cfg.kind, sigma=cfg.sigma, airlight=cfg.airlight, gamma=cfg.gamma, read_noise=cfg.read_noise, seed=cfg.seed
    )
    ds = make_dataset(cfg.source, spec, cfg.n, cfg.seed, cfg.side)
    files = io.save_dataset(ds, cfg.data_dir)
    _log(f"wrote {len(files)} files to {cfg.data_dir}")


def cmd_train_denoiser(cfg: RunConfig):
    clean, _, _ = io.load_dataset(cfg.data_dir)
    data = _model_range(clean)
    if cfg.init:
        model, sched = io.load_denoiser(cfg.init)
    else:
        sched = build_linear_schedule(cfg.T)
        model = TinyDenoiser(seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    model, losses = train_tiny_denoiser(data, sched, cfg.steps, rng, model=model, batch_size=cfg.batch_size, lr=cfg.lr)
    _log(f"trained {cfg.steps} steps in {time.perf_counter() - t0:.1f}s")
    out = Path(cfg.output)
    io.save_denoiser(out, model, sched)
    write_csv(out.with_suffix(".loss.csv"), ["step", "loss"], [[i, float(v)] for i, v in enumerate(losses)])


def cmd_restore(cfg: RunConfig):
    y = _model_range(_read_input(cfg.input, "input"))
    denoiser, sched = _denoiser(cfg, y.shape)
    sink = open(cfg.telemetry, "w") if cfg.telemetry else None
    try:
        result = restore(y, denoiser, sched, _task_preset(cfg), cfg.k_referred, cfg.seed, cfg.variant,
                         sink=sink, **_restore_kwargs(cfg))
    finally:
        if sink is not None:
            sink.close()
    io.write_image(cfg.output, to_unit_range(result.image))
    if cfg.reference:
        ref = _read_input(cfg.reference, "reference")
        rows = [metric_row("input", to_unit_range(y), ref), metric_row("restored", to_unit_range(result.image), ref)]
        target = cfg.metrics or str(Path(cfg.output).with_suffix(".csv"))
        write_csv(target, METRIC_HEADER, rows)
    _log(f"restored {cfg.input} -> {cfg.output}")


def _dataset_model_range(cfg):
    clean, degraded, _ = io.load_dataset(cfg.data_dir)
    return _model_range(clean), _model_range(degraded)


def cmd_benchmark(cfg: RunConfig):
    clean, degraded = _dataset_model_range(cfg)
    denoiser, sched = _denoiser(cfg, clean.shape)
    tp = _task_preset(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kw = _restore_kwargs(cfg)

    n = min(cfg.bench_images, len(clean))
    before, after, _ = task_table(clean[:n], degraded[:n], denoiser, sched, tp, cfg.seed, cfg.k_referred, cfg.workers, **kw)
    write_csv(out / f"{tp.task}_table.csv", ["method", "image", "psnr", "ssim"],
              before.csv_rows("input") + after.csv_rows("restored"))

    m = min(cfg.ablation_images, len(clean))
    rows = ablation_table(clean[:m], degraded[:m], denoiser, sched, tp, cfg.seed, cfg.workers, **kw)
    write_csv(out / "ablation.csv", ["variant", "psnr", "ssim"], rows)
    rows = referred_sweep(clean[:m], degraded[:m], denoiser, sched, tp, cfg.seed, cfg.workers, **kw)
    write_csv(out / "referred_sweep.csv", ["k", "psnr", "ssim"], rows)
    _log(f"input {before.mean_psnr:.4f} dB -> restored {after.mean_psnr:.4f} dB; tables in {out}")


def cmd_ablate(cfg: RunConfig):
    y = _model_range(_read_input(cfg.input, "input"))
    ref = _read_input(cfg.reference, "reference") if cfg.reference else None
    denoiser, sched = _denoiser(cfg, y.shape)
    tp = _task_preset(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in VARIANTS:
        img = restore(y, denoiser, sched, tp, cfg.k_referred, cfg.seed, variant, **_restore_kwargs(cfg)).image
        io.write_image(out / f"{variant}.png", to_unit_range(img))
        if ref is not None:
            rows.append(metric_row(VARIANT_LABELS[variant], to_unit_range(img), ref))
    if ref is not None:
        write_csv(out / "ablation.csv", ["variant", "psnr", "ssim"], rows)
    _log(f"wrote {len(VARIANTS)} variants to {out}")


def cmd_tdm_viz(cfg: RunConfig):
    """Writes [observed | clean | degradation net applied to clean] side by side."""
    y = _model_range(_read_input(cfg.input, "input"))
    denoiser, sched = _denoiser(cfg, y.shape)
    result = restore(y, denoiser, sched, _task_preset(cfg), cfg.k_referred, cfg.seed, cfg.variant,
                     **_restore_kwargs(cfg))
    clean = _model_range(_read_input(cfg.reference, "reference")) if cfg.reference else result.image
    degraded = result.tdm.degrade(clean)
    panels = [to_unit_range(a)[0] for a in (y, clean, degraded)]
    io.write_image(cfg.output, np.concatenate(panels, axis=2)[None])
    out = Path(cfg.output)
    io.write_bundle(out.with_suffix(".phi.zair"), [y.shape[1]], result.tdm.phi.state())
    _log(f"wrote triptych {cfg.output}")


COMMANDS = {
    "make-data": cmd_make_data,
    "train-denoiser": cmd_train_denoiser,
    "restore": cmd_restore,
    "benchmark": cmd_benchmark,
    "ablate": cmd_ablate,
    "tdm-viz": cmd_tdm_viz,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zeroair", description="Zero-shot restoration with a diffusion prior.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.overrides:
        bad = [o for o in args.overrides if "=" not in o]
        if bad:
            raise ConfigError(bad[0], "override must look like KEY=VALUE")
        cfg = apply_overrides(cfg, parse_lines(args.overrides))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except (ConfigError, DegradationError, io.FormatError, FileNotFoundError, InputError) as exc:
        _log(f"error: {exc}")
        return EXIT_BAD_INPUT
    except Exception as exc:  # noqa: BLE001 - top-level guard maps crashes to exit 1
        _log(f"internal error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
