"""Feature-map files, a toy patch descriptor and 2x2 max-pooling."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadMagicError, NonFiniteValueError, TruncatedFileError, UnsupportedVersionError
from .tensor import NORM_TOLERANCE, FeatureMap, PathLike, descriptor_norms, l2_normalize

MAGIC_FEATURES = b"SNCF"
_HEADER = struct.Struct("<4sIIIIff")


def feature_map_to_bytes(fmap: FeatureMap) -> bytes:
    h, w, c = fmap.shape
    sy, sx = fmap.pixel_scale
    return _HEADER.pack(MAGIC_FEATURES, 1, h, w, c, sy, sx) + fmap.values.astype("<f4").tobytes()


def feature_map_from_bytes(data: bytes) -> FeatureMap:
    if data[:4] != MAGIC_FEATURES:
        raise BadMagicError(f"expected magic {MAGIC_FEATURES!r}, got {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFileError("feature map header is truncated")
    _, version, h, w, c, sy, sx = _HEADER.unpack_from(data)
    if version != 1:
        raise UnsupportedVersionError(f"unsupported feature map version {version}")
    expected = h * w * c * 4
    payload = memoryview(data)[_HEADER.size:]
    if len(payload) != expected:
        raise TruncatedFileError(f"expected {expected} payload bytes for {h}x{w}x{c}, got {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w, c).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError("feature map contains non-finite values")
    if not (np.isfinite(sy) and np.isfinite(sx)):
        raise NonFiniteValueError("feature map pixel scale is non-finite")
    # Repair only what is out of tolerance so that valid files round-trip bit-exactly.
    norms = descriptor_norms(values)
    off = (np.abs(norms - 1.0) > NORM_TOLERANCE) & (norms > 0)
    if np.any(off):
        values[off] = l2_normalize(values[off])
    return FeatureMap(values, (sy, sx))


def save_feature_map(fmap: FeatureMap, path: PathLike) -> None:
    Path(path).write_bytes(feature_map_to_bytes(fmap))


def load_feature_map(path: PathLike) -> FeatureMap:
    return feature_map_from_bytes(Path(path).read_bytes())


def extract_patch_descriptors(image, patch: int = 8, stride: int = 4) -> FeatureMap:
    """Dense mean-subtracted, L2-normalised raw-pixel patch descriptors.

    Parameters
    ----------
    image : array_like
        Grayscale ``H x W`` image.
    patch : int
        Patch side length ``p``; descriptors have ``p * p`` channels.
    stride : int
        Grid step in pixels; also the returned ``pixel_scale``.

    Returns
    -------
    FeatureMap
        ``floor((H - p) / s) + 1`` by ``floor((W - p) / s) + 1`` grid. Constant
        patches yield all-zero descriptors.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D grayscale image, got shape {img.shape}")
    if patch < 2 or stride < 1:
        raise ValueError(f"need patch >= 2 and stride >= 1, got patch={patch}, stride={stride}")
    H, W = img.shape
    if H < patch or W < patch:
        raise ValueError(f"image {H}x{W} is smaller than the {patch}x{patch} patch")
    windows = sliding_window_view(img, (patch, patch))[::stride, ::stride]
    h, w = windows.shape[:2]
    desc = windows.reshape(h, w, patch * patch)
    desc = desc - desc.mean(axis=-1, keepdims=True)
    norms = np.sqrt(np.sum(desc * desc, axis=-1, keepdims=True))
    # relative threshold: float round-off leaves a tiny residue on constant patches
    scale = np.abs(windows).reshape(h, w, -1).max(axis=-1, keepdims=True)
    flat = norms <= 1e-9 * np.maximum(scale, 1.0) * patch
    desc = np.divide(desc, norms, out=np.zeros_like(desc), where=~flat)
    return FeatureMap(desc.astype(np.float32), (float(stride), float(stride)))


def maxpool2x2(fine: FeatureMap) -> FeatureMap:
    """Per-channel 2x2/stride-2 max pool, renormalised; odd edges are cropped."""
    h2, w2 = fine.h // 2, fine.w // 2
    if h2 < 1 or w2 < 1:
        raise ValueError(f"cannot pool a {fine.h}x{fine.w} map")
    v = fine.values[: 2 * h2, : 2 * w2]
    pooled = v.reshape(h2, 2, w2, 2, fine.c).max(axis=(1, 3))
    sy, sx = fine.pixel_scale
    return FeatureMap(l2_normalize(pooled), (2 * sy, 2 * sx))


def read_grayscale(path: PathLike) -> np.ndarray:
    """Read an 8-bit PGM/PPM image as float64 luminance.

    Colour images use ``0.299 R + 0.587 G + 0.114 B``.
    """
    from PIL import Image

    with Image.open(path) as im:
        if im.format != "PPM":
            raise ValueError(f"{path}: expected a PGM/PPM file, got {im.format}")
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64)
        if im.mode != "RGB":
            raise ValueError(f"{path}: unsupported image mode {im.mode}")
        rgb = np.asarray(im, dtype=np.float64)
    return rgb @ np.array([0.299, 0.587, 0.114])


def write_pgm(path: PathLike, image) -> None:
    """Write an 8-bit binary PGM (used to build fixtures)."""
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PPM")
