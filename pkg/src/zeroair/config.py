"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key has a default; an
unknown key or an unparsable value raises :class:`ConfigError` naming the field.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _opt_int(text: str):
    return None if text.lower() in ("", "none", "default") else int(text)


def _opt_float(text: str):
    return None if text.lower() in ("", "none", "default") else float(text)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    return text


@dataclass
class RunConfig:
    # task and weights; empty weight fields fall back to the preset
    task: str = "denoise"
    toy: bool = True
    lambdas: tuple = ()
    gammas: tuple = ()
    s: float | None = None
    variant: str = "TDG"
    # denoiser: "gmm" for the analytic prior, otherwise a parameter file
    denoiser: str = "gmm"
    gmm_components: int = 4
    gmm_variance: float = 0.01
    gmm_seed: int = 0
    T: int = 1000
    b1: int | None = None
    b2: int | None = None
    k_referred: int = 1
    seed: int = 0
    # data
    source: str = "shapes32"
    n: int = 8
    side: int = 32
    kind: str = "gaussian_noise"
    sigma: float = 30.0
    airlight: float = 0.8
    gamma: float = 2.0
    read_noise: float = 0.0
    data_dir: str = "data"
    # training
    steps: int = 2000
    batch_size: int = 16
    lr: float = 2e-3
    init: str = ""
    # paths
    input: str = ""
    reference: str = ""
    output: str = "restored.png"
    telemetry: str = ""
    metrics: str = ""
    out_dir: str = "out"
    # benchmark
    bench_images: int = 8
    ablation_images: int = 1
    workers: int = 1


_PARSERS = {
    "lambdas": _floats,
    "gammas": _floats,
    "s": _opt_float,
    "b1": _opt_int,
    "b2": _opt_int,
    "toy": _bool,
}
for _f in dataclasses.fields(RunConfig):
    if _f.name not in _PARSERS:
        default = _f.default
        _PARSERS[_f.name] = {int: int, float: float, str: _str}[type(default)]
FIELDS = tuple(_PARSERS)


def apply_overrides(cfg: RunConfig, items: dict) -> RunConfig:
    values = {}
    for key, text in items.items():
        if key not in _PARSERS:
            raise ConfigError(key, "unknown configuration key")
        text = text.strip()
        try:
            values[key] = _PARSERS[key](text)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {text!r}: {exc}") from None
    cfg = dataclasses.replace(cfg, **values)
    validate(cfg)
    return cfg


def parse_lines(lines) -> dict:
    items = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(key or f"line {lineno}", f"expected 'key = value' on line {lineno}")
        if key in items:
            raise ConfigError(key, f"duplicate key on line {lineno}")
        items[key] = value
    return items


def parse_config(text: str) -> RunConfig:
    return apply_overrides(RunConfig(), parse_lines(text.splitlines()))


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text())


def validate(cfg: RunConfig):
    from .pipeline import TASKS, VARIANTS

    if cfg.task not in TASKS:
        raise ConfigError("task", f"unknown task {cfg.task!r}; expected one of {', '.join(TASKS)}")
    if cfg.variant not in VARIANTS:
        raise ConfigError("variant", f"unknown variant {cfg.variant!r}; expected one of {', '.join(VARIANTS)}")
    if cfg.lambdas and len(cfg.lambdas) != 3:
        raise ConfigError("lambdas", f"need 3 values, got {len(cfg.lambdas)}")
    if cfg.gammas and len(cfg.gammas) != 5:
        raise ConfigError("gammas", f"need 5 values, got {len(cfg.gammas)}")
    positive = ("T", "n", "side", "batch_size", "bench_images", "ablation_images", "workers", "gmm_components")
    for name in positive:
        if getattr(cfg, name) < 1:
            raise ConfigError(name, f"must be >= 1, got {getattr(cfg, name)}")
    for name in ("k_referred", "steps", "seed"):
        if getattr(cfg, name) < 0:
            raise ConfigError(name, f"must be >= 0, got {getattr(cfg, name)}")
    if cfg.gmm_variance <= 0:
        raise ConfigError("gmm_variance", f"must be > 0, got {cfg.gmm_variance}")
    if cfg.lr <= 0:
        raise ConfigError("lr", f"must be > 0, got {cfg.lr}")
