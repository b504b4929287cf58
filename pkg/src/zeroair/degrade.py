"""Synthetic degradations with known ground truth and toy datasets.

Images here are (N, 3, H, W) float arrays in [0, 1]; conversion to the
model range happens elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

KINDS = ("gaussian_noise", "haze", "low_light")


class DegradationError(ValueError):
    """Invalid degradation parameters. ``field`` names the offending setting."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of one synthetic degradation.

    ``sigma`` is on the 0-255 scale. For haze, ``transmission`` may be a
    scalar, an (H, W) map, or None to draw a smooth random field in
    ``transmission_range`` from ``seed``.
    """

    kind: str = "gaussian_noise"
    sigma: float = 30.0
    transmission: object = None
    transmission_range: tuple = (0.3, 0.9)
    airlight: float = 0.8
    gamma: float = 2.0
    read_noise: float = 0.0
    seed: int = 0

    def validate(self):
        if self.kind not in KINDS:
            raise DegradationError("kind", f"unknown degradation {self.kind!r}; expected one of {KINDS}")
        if self.sigma < 0:
            raise DegradationError("sigma", f"must be >= 0, got {self.sigma}")
        if self.read_noise < 0:
            raise DegradationError("read_noise", f"must be >= 0, got {self.read_noise}")
        if self.gamma < 1:
            raise DegradationError("gamma", f"must be >= 1, got {self.gamma}")
        if not 0.0 <= self.airlight <= 1.0:
            raise DegradationError("airlight", f"must lie in [0, 1], got {self.airlight}")
        if self.transmission is not None:
            t = np.asarray(self.transmission, dtype=np.float64)
            if np.any(t <= 0) or np.any(t > 1):
                raise DegradationError("transmission", "values must lie in (0, 1]")
        lo, hi = self.transmission_range
        if not 0 < lo <= hi <= 1:
            raise DegradationError("transmission_range", f"need 0 < lo <= hi <= 1, got {self.transmission_range}")
        return self


def smooth_field(shape, rng: np.random.Generator, lo: float, hi: float, coarse: int = 4) -> np.ndarray:
    """Low-frequency random field of ``shape`` (H, W) rescaled to [lo, hi]."""
    h, w = shape
    grid = rng.random((coarse, coarse))
    field_ = bilinear_resize(grid[None, None], h, w)[0, 0]
    span = field_.max() - field_.min()
    field_ = (field_ - field_.min()) / span if span > 0 else np.zeros_like(field_)
    return lo + (hi - lo) * field_


def apply(spec: DegradationSpec, clean: np.ndarray) -> np.ndarray:
    """Degrade ``clean`` (values in [0, 1]); the result is clipped to [0, 1]."""
    spec.validate()
    clean = np.asarray(clean, dtype=np.float64)
    if clean.size and (clean.min() < 0 or clean.max() > 1):
        raise DegradationError("clean", "input image must lie in [0, 1]")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian_noise":
        out = clean + (spec.sigma / 255.0) * rng.standard_normal(clean.shape)
    elif spec.kind == "haze":
        if spec.transmission is None:
            t = smooth_field(clean.shape[-2:], rng, *spec.transmission_range)
        else:
            t = np.asarray(spec.transmission, dtype=np.float64)
        out = clean * t + spec.airlight * (1.0 - t)
    else:
        out = clean**spec.gamma
        if spec.read_noise > 0:
            out = out + (spec.read_noise / 255.0) * rng.standard_normal(clean.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of (..., H, W) with half-pixel centres."""
    h, w = img.shape[-2:]

    def coords(n_in, n_out):
        c = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        c = np.clip(c, 0, n_in - 1)
        i0 = np.floor(c).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, c - i0

    y0, y1, fy = coords(h, out_h)
    x0, x1, fx = coords(w, out_w)
    rows = img[..., y0, :] * (1 - fy)[:, None] + img[..., y1, :] * fy[:, None]
    return rows[..., x0] * (1 - fx) + rows[..., x1] * fx


def center_crop_resize(image: np.ndarray, side: int) -> np.ndarray:
    """Centre-crop (..., H, W) to a square on the shorter edge, then resize to ``side``."""
    if side <= 0:
        raise DegradationError("side", f"must be positive, got {side}")
    h, w = image.shape[-2:]
    if h < 1 or w < 1:
        raise DegradationError("image", "spatial dims must be >= 1")
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    crop = image[..., top : top + s, left : left + s]
    if s == side:
        return crop.copy()
    return bilinear_resize(crop, side, side).astype(image.dtype)


# ---------------------------------------------------------------------------
# shapes32: procedural clean images
# ---------------------------------------------------------------------------


def _random_color(rng):
    return rng.uniform(0.05, 0.95, size=3)


def shapes_image(rng: np.random.Generator, side: int = 32) -> np.ndarray:
    """One (3, side, side) image: smooth background plus 1-3 flat shapes."""
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    c0, c1 = _random_color(rng), _random_color(rng)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
    for _ in range(rng.integers(1, 4)):
        color = _random_color(rng)[:, None, None]
        if rng.random() < 0.5:
            h, w = rng.uniform(0.2, 0.6, size=2)
            y0, x0 = rng.uniform(0, 1 - h), rng.uniform(0, 1 - w)
            mask = (yy >= y0) & (yy <= y0 + h) & (xx >= x0) & (xx <= x0 + w)
        else:
            r = rng.uniform(0.12, 0.3)
            cy, cx = rng.uniform(r, 1 - r, size=2)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img = np.where(mask[None], color, img)
    return img.astype(np.float32)


def shapes32(rng: np.random.Generator, n: int, side: int = 32) -> np.ndarray:
    return np.stack([shapes_image(rng, side) for _ in range(n)])


GENERATORS: dict[str, Callable] = {"shapes32": shapes32}


@dataclass
class PairedDataset:
    clean: np.ndarray
    degraded: np.ndarray
    manifest: dict

    def __len__(self):
        return len(self.clean)


def make_dataset(source, spec: DegradationSpec, n: int, seed: int, side: int = 32) -> PairedDataset:
    """Build ``n`` (clean, degraded) pairs.

    ``source`` is a generator name (``"shapes32"``) or a directory of images,
    which are read in sorted order, centre-cropped and resized to ``side``.
    Pair ``i`` is degraded with seed ``spec.seed + i``.
    """
    if n < 1:
        raise DegradationError("n", f"must be >= 1, got {n}")
    spec.validate()
    rng = np.random.default_rng(seed)
    if isinstance(source, str) and source in GENERATORS:
        clean = GENERATORS[source](rng, n, side)
        source_desc = source
    else:
        from .io import IMAGE_SUFFIXES, read_image

        files = sorted(p for p in Path(source).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DegradationError("source", f"no images found in {source}")
        picks = [files[i % len(files)] for i in range(n)]
        clean = np.concatenate([center_crop_resize(read_image(p), side) for p in picks])
        source_desc = str(source)
    degraded = np.stack(
        [apply(_with_seed(spec, spec.seed + i), clean[i : i + 1])[0] for i in range(n)]
    )
    manifest = {
        "source": source_desc,
        "n": n,
        "seed": seed,
        "side": side,
        "kind": spec.kind,
        "sigma": spec.sigma,
        "airlight": spec.airlight,
        "gamma": spec.gamma,
        "read_noise": spec.read_noise,
        "degradation_seed": spec.seed,
    }
    return PairedDataset(clean.astype(np.float32), degraded, manifest)


def _with_seed(spec: DegradationSpec, seed: int) -> DegradationSpec:
    return replace(spec, seed=seed)
