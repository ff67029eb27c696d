"""Submanifold sparse 4D convolutions and the neighbourhood consensus network.

Kernels are stored as ``(3, 3, 3, 3, C_in, C_out)`` arrays and applied as a
correlation: the output at site ``x`` sums ``W[d + 1] @ input[x + d]`` over
offsets ``d`` in ``{-1, 0, 1}^4``. Only active sites are read or written.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .errors import BadMagicError, ShapeError, TruncatedFileError, UnsupportedVersionError
from .tensor import PathLike, SparseTensor4D, add_sparse, linear_index, transpose4d

ACTIVATIONS = ("identity", "relu")
OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=4)), dtype=np.int64)
DENSE_ORACLE_LIMIT = 16
MAGIC_WEIGHTS = b"SNCW"
CONV_BLOCK = 8192


@dataclass(frozen=True, eq=False)
class ConvLayer:
    kernel: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        kernel = np.ascontiguousarray(self.kernel, dtype=np.float32)
        if kernel.ndim != 6 or kernel.shape[:4] != (3, 3, 3, 3):
            raise ShapeError(f"kernel must be 3x3x3x3xC_inxC_out, got {kernel.shape}")
        bias = np.ascontiguousarray(self.bias, dtype=np.float32).reshape(-1)
        if bias.shape[0] != kernel.shape[5]:
            raise ShapeError(f"bias has {bias.shape[0]} entries for {kernel.shape[5]} outputs")
        if not (np.all(np.isfinite(kernel)) and np.all(np.isfinite(bias))):
            raise ValueError("layer weights must be finite")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        kernel.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bias", bias)

    @property
    def c_in(self) -> int:
        return self.kernel.shape[4]

    @property
    def c_out(self) -> int:
        return self.kernel.shape[5]

    @classmethod
    def delta(cls, weight: float = 1.0, activation: str = "identity") -> "ConvLayer":
        """Single-channel layer that passes its input through, scaled."""
        kernel = np.zeros((3, 3, 3, 3, 1, 1), np.float32)
        kernel[1, 1, 1, 1] = weight
        return cls(kernel, np.zeros(1, np.float32), activation)


@dataclass(frozen=True, eq=False)
class ConvNetwork:
    layers: Tuple[ConvLayer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        if layers[0].c_in != 1 or layers[-1].c_out != 1:
            raise ShapeError("network must map 1 channel to 1 channel")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.c_out != nxt.c_in:
                raise ShapeError(f"layer chaining broken: {prev.c_out} -> {nxt.c_in}")
        object.__setattr__(self, "layers", layers)

    @property
    def channels(self) -> List[int]:
        return [self.layers[0].c_in] + [layer.c_out for layer in self.layers]

    def equals(self, other: "ConvNetwork") -> bool:
        return network_to_bytes(self) == network_to_bytes(other)


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(x, 0) if activation == "relu" else x


def kernel_map(t: SparseTensor4D) -> List[Tuple[int, np.ndarray, np.ndarray]]:
    """For each kernel offset, the (output site, input neighbour) index pairs.

    Neighbours are found by binary search in the canonical key list, so the
    result is a pure function of the site set. Output rows are ascending.
    """
    keys = t.keys()
    n = t.nnz
    ha, wa, hb, wb = t.dims
    strides = np.array([wa * hb * wb, hb * wb, wb, 1], np.int64)
    cols = [t.coords[:, q] for q in range(4)]
    out = []
    for o, d in enumerate(OFFSETS):
        if not d.any():
            idx = np.arange(n, dtype=np.int32)
            out.append((o, idx, idx))
            continue
        ok = None
        for q in np.flatnonzero(d):
            col_ok = cols[q] >= 1 if d[q] < 0 else cols[q] < t.dims[q] - 1
            ok = col_ok if ok is None else ok & col_ok
        rows = np.flatnonzero(ok)
        if rows.size == 0:
            continue
        nk = keys[rows] + int(d @ strides)
        pos = np.searchsorted(keys, nk)
        np.minimum(pos, n - 1, out=pos)
        hit = keys[pos] == nk
        if hit.any():
            out.append((o, rows[hit].astype(np.int32), pos[hit].astype(np.int32)))
    return out


def _conv_values(values: np.ndarray, kmap, layer: ConvLayer, block: int = CONV_BLOCK) -> np.ndarray:
    """Apply one layer over precomputed neighbour pairs.

    Output sites are processed in fixed-size blocks to bound temporaries; each
    site still accumulates its offsets in the same order, so blocking never
    changes the result.
    """
    if values.shape[1] != layer.c_in:
        raise ShapeError(f"layer expects {layer.c_in} channels, input has {values.shape[1]}")
    n = values.shape[0]
    w = layer.kernel.reshape(81, layer.c_in, layer.c_out).astype(np.float64)
    bias = layer.bias.astype(np.float64)
    out = np.empty((n, layer.c_out), np.float32)
    for start in range(0, n, block):
        stop = min(start + block, n)
        acc = np.zeros((stop - start, layer.c_out), np.float64)
        for o, rows, cols in kmap:
            lo, hi = np.searchsorted(rows, (start, stop))
            if hi > lo:
                acc[rows[lo:hi] - start] += values[cols[lo:hi]].astype(np.float64) @ w[o]
        acc += bias
        out[start:stop] = _activate(acc, layer.activation)
    return out


def submanifold_conv(t: SparseTensor4D, layer: ConvLayer, kmap=None) -> SparseTensor4D:
    """Convolve only at active sites; the active set is unchanged."""
    if t.channels != layer.c_in:
        raise ShapeError(f"layer expects {layer.c_in} channels, input has {t.channels}")
    if kmap is None:
        kmap = kernel_map(t)
    return t.with_values(_conv_values(t.values, kmap, layer))


def network_forward(net: ConvNetwork, c: SparseTensor4D) -> SparseTensor4D:
    if c.channels != 1:
        raise ShapeError(f"network input must have 1 channel, got {c.channels}")
    kmap = kernel_map(c)
    values = c.values
    for layer in net.layers:
        values = _conv_values(values, kmap, layer)
    return c.with_values(values)


def permutation_invariant_forward(net: ConvNetwork, c: SparseTensor4D) -> SparseTensor4D:
    """``N(c) + transpose(N(transpose(c)))``."""
    return add_sparse(network_forward(net, c), transpose4d(network_forward(net, transpose4d(c))))


def dense_conv4d(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Zero-padded stride-1 dense 4D convolution (test oracle, small inputs only).

    ``x`` has shape ``(d0, d1, d2, d3)`` or ``(d0, d1, d2, d3, C_in)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        x = x[..., None]
    if x.ndim != 5 or x.shape[4] != layer.c_in:
        raise ShapeError(f"expected (d0, d1, d2, d3, {layer.c_in}) input, got {x.shape}")
    if max(x.shape[:4]) > DENSE_ORACLE_LIMIT:
        raise ValueError(f"dense oracle refuses dims above {DENSE_ORACLE_LIMIT}: {x.shape[:4]}")
    spatial = x.shape[:4]
    padded = np.pad(x, [(1, 1)] * 4 + [(0, 0)])
    w = layer.kernel.astype(np.float64)
    out = np.zeros(spatial + (layer.c_out,), np.float64)
    for d in OFFSETS:
        s = tuple(slice(1 + di, 1 + di + n) for di, n in zip(d, spatial))
        out += padded[s] @ w[tuple(d + 1)]
    out += layer.bias
    return _activate(out, layer.activation)


def dense_network_forward(net: ConvNetwork, x: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Dense forward pass re-masked to ``active`` after every layer, which
    mirrors the submanifold restriction."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        x = x[..., None]
    mask = np.asarray(active, bool)[..., None]
    for layer in net.layers:
        x = dense_conv4d(x * mask, layer) * mask
    return x


def seeded_init(
    seed: int = 0,
    channels: Sequence[int] = (1, 16, 1),
    activations: Sequence[str] | None = None,
    bias: bool = False,
) -> ConvNetwork:
    """Reproducible uniform init in ``[-a, a]`` with ``a = (81 * C_in) ** -0.5``.

    The default architecture is two layers ``1 -> 16 -> 1`` with ReLU after the
    hidden layer and no activation on the output.
    """
    rng = np.random.default_rng(seed)
    n_layers = len(channels) - 1
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["identity"]
    layers = []
    for c_in, c_out, act in zip(channels[:-1], channels[1:], activations):
        a = (81 * c_in) ** -0.5
        kernel = rng.uniform(-a, a, size=(3, 3, 3, 3, c_in, c_out))
        b = rng.uniform(-a, a, size=c_out) if bias else np.zeros(c_out)
        layers.append(ConvLayer(kernel, b, act))
    return ConvNetwork(tuple(layers))


def network_to_bytes(net: ConvNetwork) -> bytes:
    parts = [MAGIC_WEIGHTS, struct.pack("<II", 1, len(net.layers))]
    for layer in net.layers:
        parts.append(struct.pack("<IIB", layer.c_in, layer.c_out, ACTIVATIONS.index(layer.activation)))
        parts.append(layer.kernel.astype("<f4").tobytes())
        parts.append(layer.bias.astype("<f4").tobytes())
    return b"".join(parts)


def network_from_bytes(data: bytes) -> ConvNetwork:
    if data[:4] != MAGIC_WEIGHTS:
        raise BadMagicError(f"expected magic {MAGIC_WEIGHTS!r}, got {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedFileError("weights header is truncated")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != 1:
        raise UnsupportedVersionError(f"unsupported weights version {version}")
    pos = 12
    layers = []
    for i in range(n_layers):
        if len(data) < pos + 9:
            raise TruncatedFileError(f"layer {i} header is truncated")
        c_in, c_out, act = struct.unpack_from("<IIB", data, pos)
        pos += 9
        if act >= len(ACTIVATIONS):
            raise ShapeError(f"layer {i}: unknown activation code {act}")
        nk = 81 * c_in * c_out
        need = 4 * (nk + c_out)
        if len(data) < pos + need:
            raise TruncatedFileError(f"layer {i} expects {need} weight bytes, {len(data) - pos} remain")
        kernel = np.frombuffer(data, "<f4", nk, pos).reshape(3, 3, 3, 3, c_in, c_out)
        bias = np.frombuffer(data, "<f4", c_out, pos + 4 * nk)
        pos += need
        layers.append(ConvLayer(kernel, bias, ACTIVATIONS[act]))
    if pos != len(data):
        raise ShapeError(f"{len(data) - pos} trailing bytes after {n_layers} layers")
    return ConvNetwork(tuple(layers))


def save_weights(net: ConvNetwork, path: PathLike) -> None:
    Path(path).write_bytes(network_to_bytes(net))


def load_weights(path: PathLike) -> ConvNetwork:
    return network_from_bytes(Path(path).read_bytes())
