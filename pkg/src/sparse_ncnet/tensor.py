"""Core data types: dense feature maps, sparse 4D tensors and matches.

Coordinates follow the grid convention used throughout the package: a
feature map is indexed ``(row, col)`` and a 4D correlation site is
``(i, j, k, l)`` where ``(i, j)`` lives in image A and ``(k, l)`` in image B.
Sparse tensors are kept in canonical COO form, i.e. sites sorted by their
row-major linear index, with no duplicates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import (
    BadMagicError,
    NonFiniteValueError,
    ShapeError,
    TruncatedFileError,
    UnsupportedVersionError,
)

NORM_TOLERANCE = 1e-4

Dims4 = Tuple[int, int, int, int]
PathLike = Union[str, Path]


def grid_to_pixel(coord, scale):
    """Map a grid coordinate to a pixel coordinate (cell-centre convention)."""
    return (np.asarray(coord, dtype=np.float64) + 0.5) * scale - 0.5


def descriptor_norms(values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(values, dtype=np.float64), axis=-1))


def l2_normalize(values: np.ndarray) -> np.ndarray:
    """Normalise the last axis to unit length, leaving zero vectors at zero."""
    values = np.asarray(values, dtype=np.float64)
    norms = descriptor_norms(values)[..., None]
    out = np.divide(values, norms, out=np.zeros_like(values), where=norms > 0)
    return out.astype(np.float32)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense ``h x w x c`` grid of unit-length descriptors.

    ``pixel_scale`` is ``(sy, sx)``: source-image pixels per grid cell along
    rows and columns. All-zero descriptors are allowed and act as padding.
    """

    values: np.ndarray
    pixel_scale: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ShapeError(f"feature map must be h x w x c with all dims >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature map contains non-finite values")
        norms = descriptor_norms(values)
        bad = (np.abs(norms - 1.0) > NORM_TOLERANCE) & (norms != 0.0)
        if np.any(bad):
            raise ValueError(f"{int(bad.sum())} descriptors are neither unit-length nor zero")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        sy, sx = self.pixel_scale
        object.__setattr__(self, "pixel_scale", (float(sy), float(sx)))

    @classmethod
    def from_array(cls, values, pixel_scale=(1.0, 1.0)) -> "FeatureMap":
        """Build a map from raw descriptors, normalising every location."""
        return cls(l2_normalize(values), pixel_scale)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def c(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape

    def equals(self, other: "FeatureMap") -> bool:
        return (
            self.pixel_scale == other.pixel_scale
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )


def linear_index(coords: np.ndarray, dims: Dims4) -> np.ndarray:
    """Row-major int64 linear index of ``(N, 4)`` coordinates."""
    coords = np.asarray(coords)
    _, wa, hb, wb = dims
    key = coords[:, 0].astype(np.int64)
    for q, size in ((1, wa), (2, hb), (3, wb)):
        key *= size
        key += coords[:, q]
    return key


@dataclass(frozen=True, eq=False)
class SparseTensor4D:
    """COO sparse tensor over a 4D grid with a ``C``-vector at each active site.

    ``coords`` is ``(N, 4)`` int32 and ``values`` is ``(N, C)`` float32. The
    constructor only accepts canonical input; use :meth:`from_sites` for
    unsorted data.
    """

    dims: Dims4
    coords: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 4 or min(dims) < 1:
            raise ShapeError(f"dims must be four positive integers, got {self.dims}")
        coords = np.asarray(self.coords).reshape(-1, 4)
        if coords.size and (coords.min() < 0 or np.any(coords.max(axis=0) >= np.asarray(dims))):
            raise ValueError("site coordinates out of bounds")
        coords = np.ascontiguousarray(coords, dtype=np.int32)
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] != coords.shape[0] or values.shape[1] < 1:
            raise ShapeError(f"values shape {values.shape} does not match {coords.shape[0]} sites")
        if coords.shape[0] > 1:
            keys = linear_index(coords, dims)
            if np.any(keys[1:] <= keys[:-1]):
                raise ValueError("sites must be unique and sorted by linear index")
        coords.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_sites(cls, dims, coords, values) -> "SparseTensor4D":
        """Canonicalise arbitrary-order sites. Duplicate coordinates are rejected."""
        dims = tuple(int(d) for d in dims)
        coords = np.asarray(coords).reshape(-1, 4)
        if not np.issubdtype(coords.dtype, np.integer):
            if coords.size and not np.array_equal(coords, np.round(coords)):
                raise ValueError("site coordinates must be integers")
            coords = coords.astype(np.int64)
        values = np.asarray(values, dtype=np.float32)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if coords.size and (coords.min() < 0 or np.any(coords.max(axis=0) >= np.asarray(dims))):
            raise ValueError("site coordinates out of bounds")
        order = np.argsort(linear_index(coords, dims), kind="stable")
        return cls(dims, coords[order], values[order])

    @classmethod
    def from_dict(cls, dims, sites: dict) -> "SparseTensor4D":
        """Convenience constructor from ``{(i, j, k, l): value_or_vector}``."""
        if not sites:
            return cls.empty(dims)
        coords = np.array(list(sites.keys()), dtype=np.int64)
        values = np.array([np.atleast_1d(v) for v in sites.values()], dtype=np.float32)
        return cls.from_sites(dims, coords, values)

    @classmethod
    def empty(cls, dims, channels: int = 1) -> "SparseTensor4D":
        return cls(dims, np.zeros((0, 4), np.int32), np.zeros((0, channels), np.float32))

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def nnz(self) -> int:
        return self.coords.shape[0]

    def __len__(self) -> int:
        return self.nnz

    def keys(self) -> np.ndarray:
        return linear_index(self.coords, self.dims)

    def to_dict(self) -> dict:
        out = {}
        for c, v in zip(self.coords.tolist(), self.values):
            out[tuple(c)] = v[0].item() if v.size == 1 else v.copy()
        return out

    def with_values(self, values: np.ndarray) -> "SparseTensor4D":
        """Same active sites, new per-site values."""
        return SparseTensor4D(self.dims, self.coords, values)

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        """Dense ``dims + (C,)`` array; only sensible for small tensors."""
        out = np.full(self.dims + (self.channels,), fill, dtype=np.float32)
        if self.nnz:
            out[tuple(self.coords.T)] = self.values
        return out

    def equals(self, other: "SparseTensor4D") -> bool:
        return self.to_bytes() == other.to_bytes()

    def to_bytes(self) -> bytes:
        n, c = self.nnz, self.channels
        header = MAGIC_TENSOR + struct.pack("<I4IIQ", 1, *self.dims, c, n)
        rec = np.empty(n, dtype=_site_dtype(c))
        rec["coord"] = self.coords
        rec["value"] = self.values
        return header + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "SparseTensor4D":
        if data[:4] != MAGIC_TENSOR:
            raise BadMagicError(f"expected magic {MAGIC_TENSOR!r}, got {data[:4]!r}")
        if len(data) < _TENSOR_HEADER.size:
            raise TruncatedFileError("sparse tensor header is truncated")
        _, version, hA, wA, hB, wB, c, n = _TENSOR_HEADER.unpack_from(data)
        if version != 1:
            raise UnsupportedVersionError(f"unsupported sparse tensor version {version}")
        dt = _site_dtype(c)
        payload = memoryview(data)[_TENSOR_HEADER.size:]
        if len(payload) != n * dt.itemsize:
            raise TruncatedFileError(
                f"header declares {n} sites ({n * dt.itemsize} bytes), payload has {len(payload)} bytes"
            )
        rec = np.frombuffer(payload, dtype=dt, count=n)
        if not np.all(np.isfinite(rec["value"])):
            raise NonFiniteValueError("sparse tensor contains non-finite values")
        return cls((hA, wA, hB, wB), rec["coord"].astype(np.int64), rec["value"].reshape(n, c))

    def save(self, path: PathLike) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: PathLike) -> "SparseTensor4D":
        return cls.from_bytes(Path(path).read_bytes())


MAGIC_TENSOR = b"SNC4"
_TENSOR_HEADER = struct.Struct("<4sI4IIQ")


def _site_dtype(channels: int) -> np.dtype:
    return np.dtype([("coord", "<u4", (4,)), ("value", "<f4", (channels,))])


def transpose4d(t: SparseTensor4D) -> SparseTensor4D:
    """Swap the image-A axes with the image-B axes."""
    ha, wa, hb, wb = t.dims
    return SparseTensor4D.from_sites((hb, wb, ha, wa), t.coords[:, [2, 3, 0, 1]], t.values)


def add_sparse(x: SparseTensor4D, y: SparseTensor4D) -> SparseTensor4D:
    """Elementwise sum over the union of active sites."""
    if x.dims != y.dims or x.channels != y.channels:
        raise ShapeError(
            f"cannot add tensors of dims {x.dims}/{x.channels}ch and {y.dims}/{y.channels}ch"
        )
    kx, ky = x.keys(), y.keys()
    # both operands are canonical, so the union is a merge of two sorted lists
    pos = np.searchsorted(kx, ky)
    hit = pos < kx.size
    hit[hit] = kx[pos[hit]] == ky[hit]
    fresh = np.flatnonzero(~hit)
    n = kx.size + fresh.size
    x_dest = np.arange(kx.size) + np.searchsorted(ky[fresh], kx)
    y_dest = pos[fresh] + np.arange(fresh.size)
    coords = np.empty((n, 4), np.int32)
    values = np.empty((n, x.channels), np.float32)
    coords[x_dest] = x.coords
    values[x_dest] = x.values
    values[x_dest[pos[hit]]] += y.values[hit]
    coords[y_dest] = y.coords[fresh]
    values[y_dest] = y.values[fresh]
    return SparseTensor4D(x.dims, coords, values)


@dataclass(frozen=True)
class Match:
    """Coarse-grid correspondence ``a=(i, j)`` in A to ``b=(k, l)`` in B."""

    a: Tuple[int, int]
    b: Tuple[int, int]
    score: float

    def swapped(self) -> "Match":
        return Match(self.b, self.a, self.score)


@dataclass(frozen=True)
class RefinedMatch:
    """Correspondence on the 2x fine grid.

    ``a`` and ``b`` are fractional ``(row, col)`` fine-grid coordinates;
    ``pixel_a`` and ``pixel_b`` are ``(x, y)`` source-image pixels.
    ``similarity`` is the fine-grid inner product chosen by hard
    relocalisation, when that stage ran.
    """

    a: Tuple[float, float]
    b: Tuple[float, float]
    score: float
    pixel_a: Tuple[float, float]
    pixel_b: Tuple[float, float]
    similarity: Optional[float] = None

    def swapped(self) -> "RefinedMatch":
        return RefinedMatch(self.b, self.a, self.score, self.pixel_b, self.pixel_a, self.similarity)
