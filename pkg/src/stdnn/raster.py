"""Raster containers, image I/O and resampling.

Conventions used throughout the package:

* a *channel field* is a float64 array of shape ``(C, H, W)`` (planar,
  channel-major, so each channel is a contiguous ``H x W`` slice);
* a *region mask* is a boolean array of shape ``(H, W)``;
* a *label map* is an integer array of shape ``(H, W)`` with labels
  ``0..N-1``.

Plain numpy arrays are used for all three; the ``as_*`` helpers validate
and normalise inputs at module boundaries.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

_SUPPORTED_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}


class RasterError(ValueError):
    """Raised on malformed rasters or unsupported image files."""


def as_field(data, copy: bool = False) -> np.ndarray:
    """Return `data` as a finite float64 ``(C, H, W)`` array.

    A 2-D input is promoted to a single channel.
    """
    arr = np.array(data, dtype=np.float64, copy=copy or None)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise RasterError(f"channel field must be 2-D or 3-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RasterError("channel field contains NaN or Inf")
    return arr


def as_mask(mask, shape: tuple[int, int] | None = None) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise RasterError(f"region mask must be 2-D, got shape {m.shape}")
    if shape is not None and m.shape != tuple(shape):
        raise RasterError(f"mask shape {m.shape} does not match raster {tuple(shape)}")
    return m


def as_labels(labels, shape: tuple[int, int] | None = None) -> np.ndarray:
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise RasterError(f"label map must be 2-D, got shape {lab.shape}")
    if not np.issubdtype(lab.dtype, np.integer):
        if not np.all(lab == np.round(lab)):
            raise RasterError("label map must hold integers")
    lab = lab.astype(np.int64)
    if lab.size and lab.min() < 0:
        raise RasterError("labels must be nonnegative")
    if shape is not None and lab.shape != tuple(shape):
        raise RasterError(f"label shape {lab.shape} does not match raster {tuple(shape)}")
    return lab


def relabel(labels) -> np.ndarray:
    """Map arbitrary integer labels onto the contiguous range ``0..N-1``.

    Order of first appearance in sorted label value is preserved.
    """
    lab = np.asarray(labels)
    _, inverse = np.unique(lab, return_inverse=True)
    return inverse.reshape(lab.shape).astype(np.int64)


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PGM/PPM file into a ``(C, H, W)`` field in ``[0, 1]``.

    Grayscale files give one channel, everything else is converted to RGB.
    """
    path = Path(path)
    if path.suffix.lower() not in _SUPPORTED_SUFFIXES:
        raise RasterError(f"unsupported image format: {path}")
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise RasterError(f"only 8-bit images are supported: {path}")
            if im.mode in ("L", "1", "LA"):
                arr = np.asarray(im.convert("L"))[None]
            else:
                arr = np.moveaxis(np.asarray(im.convert("RGB")), -1, 0)
    except OSError as exc:
        raise RasterError(f"cannot read image {path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def to_uint8(field) -> np.ndarray:
    f = as_field(field)
    return np.clip(np.round(f * 255.0), 0, 255).astype(np.uint8)


def save_image(path, field) -> None:
    """Write a 1- or 3-channel field with values in ``[0, 1]`` as 8-bit."""
    path = Path(path)
    if path.suffix.lower() not in _SUPPORTED_SUFFIXES:
        raise RasterError(f"unsupported image format: {path}")
    data = to_uint8(field)
    if data.shape[0] == 1:
        im = Image.fromarray(data[0], mode="L")
    elif data.shape[0] == 3:
        im = Image.fromarray(np.ascontiguousarray(np.moveaxis(data, 0, -1)), mode="RGB")
    else:
        raise RasterError(f"can only save 1 or 3 channels, got {data.shape[0]}")
    im.save(path)


def save_labels(path, labels) -> None:
    """Write a label map as an 8-bit PGM (pixel value = label)."""
    lab = as_labels(labels)
    if lab.size and lab.max() > 255:
        raise RasterError("label maps with more than 256 labels cannot be stored as 8-bit PGM")
    Image.fromarray(lab.astype(np.uint8), mode="L").save(Path(path), format="PPM")


def load_labels(path) -> np.ndarray:
    try:
        with Image.open(Path(path)) as im:
            if im.mode not in ("L", "1", "P"):
                raise RasterError(f"label file must be single-channel 8-bit: {path}")
            return np.asarray(im).astype(np.int64)
    except OSError as exc:
        raise RasterError(f"cannot read label map {path}: {exc}") from exc


def downsample(field, factor: int) -> np.ndarray:
    """Block-mean downsampling by an integer factor.

    Trailing rows/columns that do not fill a whole block are dropped.
    """
    f = as_field(field)
    factor = int(factor)
    _, h, w = f.shape
    if factor < 1:
        raise RasterError("downsample factor must be a positive integer")
    if factor >= min(h, w) and not (factor == 1):
        raise RasterError(f"factor {factor} too large for a {h}x{w} raster")
    if factor == 1:
        return f.copy()
    hh, ww = h // factor, w // factor
    f = f[:, : hh * factor, : ww * factor]
    return f.reshape(f.shape[0], hh, factor, ww, factor).mean(axis=(2, 4))


def downsample_labels(labels, factor: int) -> np.ndarray:
    """Majority-vote label downsampling consistent with :func:`downsample`."""
    lab = as_labels(labels)
    factor = int(factor)
    if factor == 1:
        return lab.copy()
    h, w = lab.shape
    hh, ww = h // factor, w // factor
    blocks = lab[: hh * factor, : ww * factor].reshape(hh, factor, ww, factor)
    blocks = blocks.transpose(0, 2, 1, 3).reshape(hh, ww, -1)
    n = int(lab.max()) + 1
    counts = np.stack([(blocks == k).sum(-1) for k in range(n)])
    return relabel(np.argmax(counts, axis=0))


def to_grayscale(field) -> np.ndarray:
    """ITU-R 601 luma of an RGB field, returned as one channel."""
    f = as_field(field)
    if f.shape[0] != 3:
        raise RasterError(f"grayscale conversion needs 3 channels, got {f.shape[0]}")
    wr, wg, wb = GRAY_WEIGHTS
    return (wr * f[0] + wg * f[1] + wb * f[2])[None]


def normalize(field) -> np.ndarray:
    """Per-channel zero mean / unit variance (constant channels are only centred)."""
    f = as_field(field)
    mean = f.mean(axis=(1, 2), keepdims=True)
    std = f.std(axis=(1, 2), keepdims=True)
    std[std == 0] = 1.0
    return (f - mean) / std
