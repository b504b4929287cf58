"""Raw tensor container, parameter bundles and 8-bit image I/O.

RawTensorFile layout (all little-endian)::

    b"ZAIR1"            5-byte magic
    b"f"                1-byte dtype tag, 'f' = float32
    4 x int64           dimensions (N, C, H, W)
    N*C*H*W x float32   row-major payload

A parameter bundle is a concatenation of such records: the first holds a
float vector of metadata, the rest hold one parameter each, reshaped to 4-D.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

MAGIC = b"ZAIR1"
DTYPE_TAG = b"f"
_HEADER = struct.Struct("<5sc4q")
IMAGE_SUFFIXES = {".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg", ".ppm"}


class FormatError(ValueError):
    """Malformed tensor or image file."""


def _as4d(arr: np.ndarray) -> np.ndarray:
    if arr.ndim > 4:
        raise FormatError(f"cannot store a {arr.ndim}-D array in a 4-D record")
    return arr.reshape((1,) * (4 - arr.ndim) + arr.shape)


def encode_tensor(arr) -> bytes:
    a = _as4d(np.ascontiguousarray(arr, dtype="<f4"))
    return _HEADER.pack(MAGIC, DTYPE_TAG, *a.shape) + a.tobytes(order="C")


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one record at ``offset``; returns (array, offset after the record)."""
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated tensor header")
    magic, tag, *dims = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if tag != DTYPE_TAG:
        raise FormatError(f"unsupported dtype tag {tag!r}")
    if any(d < 0 for d in dims):
        raise FormatError(f"negative dimension in {dims}")
    start = offset + _HEADER.size
    nbytes = int(np.prod(dims)) * 4
    if len(buf) - start < nbytes:
        raise FormatError(f"payload truncated: need {nbytes} bytes, have {len(buf) - start}")
    arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=start).reshape(dims)
    return arr.astype(np.float32), start + nbytes


def write_tensor(path, arr):
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor payload")
    return arr


def write_bundle(path, meta, arrays):
    parts = [encode_tensor(np.asarray(meta, dtype=np.float32))]
    parts += [encode_tensor(a) for a in arrays]
    Path(path).write_bytes(b"".join(parts))


def read_bundle(path) -> tuple[np.ndarray, list[np.ndarray]]:
    buf = Path(path).read_bytes()
    records, off = [], 0
    while off < len(buf):
        arr, off = decode_tensor(buf, off)
        records.append(arr)
    if not records:
        raise FormatError(f"{path} holds no records")
    return records[0].reshape(-1), records[1:]


# ---------------------------------------------------------------------------
# denoiser persistence
# ---------------------------------------------------------------------------


def save_denoiser(path, model, sched):
    """Store a TinyDenoiser with the schedule it was trained for."""
    c = model.config
    mults = list(c["mults"])
    meta = [sched.T, sched.betas[1], sched.betas[-1], c["base"], c["in_ch"], c["emb_dim"], c["seed"], len(mults), *mults]
    write_bundle(path, meta, model.state())


def load_denoiser(path):
    from .diffusion import TinyDenoiser, build_linear_schedule

    meta, arrays = read_bundle(path)
    try:
        T, b0, b1, base, in_ch, emb, seed, nm = meta[:8]
        mults = tuple(int(m) for m in meta[8 : 8 + int(nm)])
    except ValueError as exc:
        raise FormatError(f"{path}: bad denoiser metadata") from exc
    model = TinyDenoiser(base=int(base), mults=mults, in_ch=int(in_ch), emb_dim=int(emb), seed=int(seed))
    model.load_state(arrays)
    return model, build_linear_schedule(int(T), float(b0), float(b1))


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Read an 8-bit image as a (1, 3, H, W) float32 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            im.load()
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from exc
    return (rgb / 255.0).transpose(2, 0, 1)[None]


def write_image(path, img):
    """Write a (1, 3, H, W), (3, H, W) or (H, W) array in [0, 1] as 8-bit PNG."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError("write_image takes a single image")
        a = a[0]
    if a.ndim == 3:
        a = a.transpose(1, 2, 0)
        if a.shape[2] == 1:
            a = a[..., 0]
    q = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q).save(path, format="PNG")


# ---------------------------------------------------------------------------
# paired datasets on disk
# ---------------------------------------------------------------------------

MANIFEST = "manifest.txt"


def save_dataset(ds, out_dir) -> list[Path]:
    """Write ``clean_XXX.png`` / ``degraded_XXX.png`` pairs plus a key-value manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(len(ds.clean)):
        for name, arr in (("clean", ds.clean), ("degraded", ds.degraded)):
            path = out / f"{name}_{i:03d}.png"
            write_image(path, arr[i])
            written.append(path)
    lines = [f"{k} = {v}" for k, v in ds.manifest.items()]
    (out / MANIFEST).write_text("\n".join(lines) + "\n")
    written.append(out / MANIFEST)
    return written


def read_manifest(path) -> dict:
    entries = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def load_dataset(data_dir) -> tuple[np.ndarray, np.ndarray, dict]:
    """Read a directory written by :func:`save_dataset`; arrays are (N, 3, H, W) in [0, 1]."""
    root = Path(data_dir)
    if not (root / MANIFEST).is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    clean_files = sorted(root.glob("clean_*.png"))
    if not clean_files:
        raise FormatError(f"{root} holds no clean_*.png images")
    clean, degraded = [], []
    for path in clean_files:
        pair = path.with_name(path.name.replace("clean_", "degraded_", 1))
        if not pair.is_file():
            raise FormatError(f"missing degraded partner for {path.name}")
        clean.append(read_image(path))
        degraded.append(read_image(pair))
    return np.concatenate(clean), np.concatenate(degraded), read_manifest(root / MANIFEST)
