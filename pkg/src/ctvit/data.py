"""Samples, the synthetic glyph/band dataset, and on-disk image formats.

Manifest: one ``<relative-image-path>\\t<expr_label>\\t<mask_label>`` per
line. Images are binary PPM (P6, or P5 greyscale replicated to 3 channels)
or the raw-tensor format::

    b"CTVT" | u8 version | u8 dtype (0 = f32) | u32 rank | u32 dims... | payload

all little-endian, payload row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .vit import resize_bilinear

NUM_EXPR_CLASSES = 7
EXPRESSIONS = ("angry", "disgust", "fear", "happy", "neutral", "sad", "surprise")

RAW_MAGIC = b"CTVT"
RAW_VERSION = 1
DTYPES = {0: np.dtype("<f4")}


class DataError(ValueError):
    pass


@dataclass
class LabeledSample:
    image: np.ndarray  # (3, S, S) float64, normalised
    expr_label: int
    mask_label: int


def stack(samples: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples])
    expr = np.array([s.expr_label for s in samples], dtype=np.int64)
    mask = np.array([s.mask_label for s in samples], dtype=np.int64)
    return images, expr, mask


def normalize(pixels: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    """``(pixels - mean) / std`` per channel; ``pixels`` is (3, H, W) in [0, 1]."""
    m = np.asarray(mean, dtype=np.float64).reshape(3, 1, 1)
    s = np.asarray(std, dtype=np.float64).reshape(3, 1, 1)
    return (pixels - m) / s


# synthetic data -----------------------------------------------------------

BACKGROUND = 0.15
GLYPH = (1.0, 0.9, 0.3)
BAND = (0.35, 0.75, 1.0)


def _glyph(kind: int, side: int) -> np.ndarray:
    """Boolean mask of one of seven shapes centred in the upper half and
    reaching into the band rows."""
    yy, xx = np.mgrid[0:side, 0:side].astype(float) / side
    cy, cx = 0.34, 0.5
    dy, dx = yy - cy, xx - cx
    r = np.hypot(dy, dx)
    inside = (np.abs(dy) <= 0.3) & (np.abs(dx) <= 0.3)
    w = 0.07
    shapes = {
        0: inside & (np.abs(dy) <= w),                                  # horizontal bar
        1: inside & (np.abs(dx) <= w),                                  # vertical bar
        2: inside & (np.abs(dy - dx) <= w * 1.2),                       # diagonal
        3: inside & (np.abs(dy + dx) <= w * 1.2),                       # anti-diagonal
        4: inside & ((np.abs(dy) <= w) | (np.abs(dx) <= w)),            # plus
        5: (np.abs(r - 0.22) <= w),                                     # ring
        6: inside & (np.maximum(np.abs(dy), np.abs(dx)) >= 0.3 - w),    # square outline
    }
    return shapes[kind]


def band_rows(side: int) -> slice:
    return slice(int(round(0.55 * side)), int(round(0.85 * side)))


def render_toy(expr_label: int, mask_label: int, side: int, rng: np.random.Generator) -> np.ndarray:
    """One (3, side, side) image with pixel values clipped to [0, 1]."""
    img = np.full((3, side, side), BACKGROUND)
    g = _glyph(expr_label, side)
    for c in range(3):
        img[c][g] = GLYPH[c]
    if mask_label:
        rows = band_rows(side)
        for c in range(3):
            img[c, rows, :] = BAND[c]
    img += rng.normal(0.0, 0.1, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def balanced_labels(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if n < NUM_EXPR_CLASSES:
        raise DataError(f"cannot balance {NUM_EXPR_CLASSES} expression classes over {n} samples")
    i = np.arange(n)
    expr = i % NUM_EXPR_CLASSES
    mask = (i // NUM_EXPR_CLASSES) % 2
    order = rng.permutation(n)
    return expr[order], mask[order]


def toy_pixels(n: int, side: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw [0, 1] pixels and labels, deterministic per seed."""
    rng = np.random.default_rng(seed)
    expr, mask = balanced_labels(n, rng)
    pixels = np.stack([render_toy(int(e), int(m), side, rng) for e, m in zip(expr, mask)])
    return pixels, expr, mask


def generate_toy_dataset(
    n: int,
    side: int = 32,
    seed: int = 0,
    mean: Sequence[float] = (0.5, 0.5, 0.5),
    std: Sequence[float] = (0.5, 0.5, 0.5),
) -> list[LabeledSample]:
    pixels, expr, mask = toy_pixels(n, side, seed)
    return [
        LabeledSample(normalize(p, mean, std), int(e), int(m))
        for p, e, m in zip(pixels, expr, mask)
    ]


def write_toy_dataset(out_dir: str | Path, n: int, side: int, seed: int) -> Path:
    """Write PPM images and a manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    pixels, expr, mask = toy_pixels(n, side, seed)
    lines = []
    for i, (p, e, m) in enumerate(zip(pixels, expr, mask)):
        rel = f"images/{i:06d}.ppm"
        write_ppm(out / rel, to_uint8(p))
        lines.append(f"{rel}\t{e}\t{m}")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


# file formats ---------------------------------------------------------------

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """``image`` is (3, H, W) uint8."""
    _, h, w = image.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(image.transpose(1, 2, 0)).tobytes())


def _ppm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PPM header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_ppm(path: str | Path) -> np.ndarray:
    """Returns (3, H, W) floats in [0, 1]. P5 greyscale is replicated to 3 channels."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _ppm_tokens(buf, 4)
    if magic not in (b"P6", b"P5"):
        raise DataError(f"{path}: unsupported image magic {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM/PGM is supported")
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos) if len(buf) - pos >= need else None
    if data is None:
        raise DataError(f"{path}: truncated pixel data")
    img = data.reshape(h, w, channels).transpose(2, 0, 1).astype(np.float64) / 255.0
    return np.repeat(img, 3, axis=0) if channels == 1 else img


def write_raw_tensor(path: str | Path, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype="<f4")
    header = RAW_MAGIC + struct.pack("<BBI", RAW_VERSION, 0, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_raw_tensor(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != RAW_MAGIC or len(buf) < 10:
        raise DataError(f"{path}: not a raw tensor file")
    version, dtype_code, rank = struct.unpack_from("<BBI", buf, 4)
    if version != RAW_VERSION or dtype_code not in DTYPES:
        raise DataError(f"{path}: unsupported version {version} / dtype {dtype_code}")
    dims = struct.unpack_from(f"<{rank}I", buf, 10)
    offset = 10 + 4 * rank
    dtype = DTYPES[dtype_code]
    count = int(np.prod(dims)) if dims else 1
    if len(buf) - offset != count * dtype.itemsize:
        raise DataError(f"{path}: payload size does not match shape {dims}")
    return np.frombuffer(buf, dtype=dtype, offset=offset).reshape(dims).astype(np.float64)


def _load_image(path: Path) -> np.ndarray:
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        return read_ppm(path)
    img = read_raw_tensor(path)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise DataError(f"{path}: raw tensor must be (H, W), (1, H, W) or (3, H, W), got {img.shape}")
    return np.repeat(img, 3, axis=0) if img.shape[0] == 1 else img


def load_dataset(
    manifest_path: str | Path,
    side: int | None = None,
    mean: Sequence[float] = (0.5, 0.5, 0.5),
    std: Sequence[float] = (0.5, 0.5, 0.5),
    num_expr_classes: int = NUM_EXPR_CLASSES,
    num_mask_classes: int = 2,
) -> list[LabeledSample]:
    """Load a manifest. Raw-tensor pixels are taken as already in [0, 1]."""
    manifest = Path(manifest_path)
    if not manifest.is_file():
        raise DataError(f"manifest not found: {manifest}")
    samples = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{manifest}:{lineno}: expected 3 tab-separated fields")
        try:
            expr, mask = int(parts[1]), int(parts[2])
        except ValueError:
            raise DataError(f"{manifest}:{lineno}: labels must be integers") from None
        if not 0 <= expr < num_expr_classes or not 0 <= mask < num_mask_classes:
            raise DataError(f"{manifest}:{lineno}: label out of range ({expr}, {mask})")
        img_path = manifest.parent / parts[0]
        if not img_path.is_file():
            raise DataError(f"{manifest}:{lineno}: image not found: {parts[0]}")
        img = _load_image(img_path)
        if side is not None and img.shape[1:] != (side, side):
            img = resize_bilinear(img, side)
        samples.append(LabeledSample(normalize(img, mean, std), expr, mask))
    return samples
