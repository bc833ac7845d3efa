"""Image payloads (P5 PGM / P6 PPM) and seeded ROI-preserving augmentation.

The augmentation noise source is splitmix64, chosen so the byte stream can be
reproduced in any language (see docs/formats.md for the exact recurrence):

    state_i = seed + i * 0x9E3779B97F4A7C15          (wrapping u64, i >= 1)
    z = state_i
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output_i = z ^ (z >> 31)

Outputs are consumed as little-endian bytes and written over the pixels
outside the ROI in row-major, channel-minor order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .masks import MaskFormatError, PathLike, Roi, _read_pgm_header

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First n outputs of splitmix64 for the given seed, as u64."""
    idx = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GAMMA
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def splitmix64_bytes(seed: int, n: int) -> np.ndarray:
    """First n bytes of the splitmix64 stream (little-endian per output)."""
    words = splitmix64(seed, (n + 7) // 8)
    return words.astype("<u8").view(np.uint8)[:n]


def _read_ppm_header(data: bytes, path: PathLike) -> tuple[int, int, int, int]:
    # Same field layout as P5; only the magic and payload width differ.
    patched = b"P5" + data[2:]
    return _read_pgm_header(patched, path)


def load_image(path: PathLike) -> np.ndarray:
    """Load a P5 (grayscale, HxW) or P6 (RGB, HxWx3) image as uint8."""
    data = Path(path).read_bytes()
    if data[:2] == b"P5":
        width, height, _, offset = _read_pgm_header(data, path)
        channels = 1
    elif data[:2] == b"P6":
        width, height, _, offset = _read_ppm_header(data, path)
        channels = 3
    else:
        raise MaskFormatError(f"{path}: unrecognized image format")
    count = height * width * channels
    if len(data) < offset + count:
        raise MaskFormatError(f"{path}: truncated image payload")
    raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)
    if channels == 1:
        return raw.reshape(height, width).copy()
    return raw.reshape(height, width, 3).copy()


def save_image(image: np.ndarray, path: PathLike) -> None:
    """Write uint8 image as P5 (2-D) or P6 (3-D RGB)."""
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim == 2:
        magic = b"P5"
        height, width = arr.shape
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
        height, width = arr.shape[:2]
    else:
        raise ValueError(f"image must be HxW or HxWx3 uint8, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (width, height))
        fh.write(arr.tobytes())


def augment_image(image: np.ndarray, roi: Roi, seed: int) -> np.ndarray:
    """Randomize every byte outside the ROI; pixels inside are untouched.

    Deterministic for a given (image shape, roi, seed).
    """
    arr = np.asarray(image, dtype=np.uint8)
    height, width = arr.shape[:2]
    roi.validate_for(height, width)
    inside = np.zeros((height, width), dtype=bool)
    inside[roi.r0 : roi.r1, roi.c0 : roi.c1] = True
    if arr.ndim == 3:
        inside = np.repeat(inside[:, :, None], arr.shape[2], axis=2)
    out = arr.copy()
    flat = out.reshape(-1)
    outside_idx = np.flatnonzero(~inside.reshape(-1))
    flat[outside_idx] = splitmix64_bytes(seed, outside_idx.size)
    return out
