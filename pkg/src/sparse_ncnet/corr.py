"""Top-K sparse correlation tensors built from two dense feature maps."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import FeatureMap, SparseTensor4D, add_sparse, transpose4d

COORD_BYTES = 4 * 4
VALUE_BYTES = 4
# candidate similarities per processing block; fixed so results never depend on threading
BLOCK_ELEMENTS = 1 << 18


@dataclass(frozen=True)
class CorrConfig:
    k: int = 10
    symmetric: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")


def pair_dots(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inner products along the last axis, accumulated in float64.

    The elementwise product is commutative and the reduction order only
    depends on the channel axis, so ``pair_dots(x, y) == pair_dots(y, x)``
    bit for bit. Correlation values rely on this for exact A/B symmetry.
    """
    return np.sum(x.astype(np.float64) * y.astype(np.float64), axis=-1)


def _select_topk(sim: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask with exactly ``k`` True per row: the largest values,
    ties resolved in favour of the smaller column index."""
    n = sim.shape[1]
    kth = np.partition(sim, n - k, axis=1)[:, n - k : n - k + 1]
    above = sim > kth
    tied = sim == kth
    room = k - above.sum(axis=1, keepdims=True)
    return above | (tied & (np.cumsum(tied, axis=1, dtype=np.int32) <= room))


def topk_correlation(src: FeatureMap, dst: FeatureMap, k: int, threads: int = 1) -> SparseTensor4D:
    """One-sided sparse correlation: each source cell keeps its K most similar
    destination cells.

    Returns a 1-channel tensor of dims ``(src.h, src.w, dst.h, dst.w)`` with
    exactly ``K`` sites per source cell.
    """
    if src.c != dst.c:
        raise ShapeError(f"channel mismatch: {src.c} vs {dst.c}")
    n_src, n_dst = src.h * src.w, dst.h * dst.w
    if not 1 <= k <= n_dst:
        raise ValueError(f"K must lie in [1, {n_dst}], got {k}")
    a = src.values.reshape(n_src, -1)
    b = dst.values.reshape(n_dst, -1)
    b64 = b.astype(np.float64)
    rows = max(1, BLOCK_ELEMENTS // n_dst)
    starts = range(0, n_src, rows)

    def block(start):
        stop = min(start + rows, n_src)
        sim = a[start:stop].astype(np.float64) @ b64.T
        r, cidx = np.nonzero(_select_topk(sim, k))
        r += start
        return r, cidx, pair_dots(a[r], b[cidx]).astype(np.float32)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(block, starts))
    else:
        parts = [block(s) for s in starts]
    src_idx = np.concatenate([p[0] for p in parts])
    dst_idx = np.concatenate([p[1] for p in parts])
    values = np.concatenate([p[2] for p in parts])
    coords = np.empty((src_idx.size, 4), np.int32)
    coords[:, 0], coords[:, 1] = np.divmod(src_idx, src.w)
    coords[:, 2], coords[:, 3] = np.divmod(dst_idx, dst.w)
    # row-major nonzero over ascending source rows is already canonical
    return SparseTensor4D((src.h, src.w, dst.h, dst.w), coords, values[:, None])


def symmetric_correlation(
    fa: FeatureMap, fb: FeatureMap, cfg: CorrConfig = CorrConfig(), threads: int = 1
) -> SparseTensor4D:
    """``c_AB = c_A->B + transpose(c_B->A)``; one-sided when ``cfg.symmetric`` is off."""
    ab = topk_correlation(fa, fb, cfg.k, threads)
    if not cfg.symmetric:
        return ab
    ba = topk_correlation(fb, fa, cfg.k, threads)
    return add_sparse(ab, transpose4d(ba))


def storage_bytes(t: SparseTensor4D) -> int:
    """Minimal COO footprint: four 32-bit coordinates plus C float32 per site."""
    return t.nnz * (COORD_BYTES + VALUE_BYTES * t.channels)


def aligned_record_bytes(channels: int = 1, alignment: int = 8) -> int:
    raw = COORD_BYTES + VALUE_BYTES * channels
    return int(math.ceil(raw / alignment) * alignment)


def aligned_storage_bytes(t: SparseTensor4D, alignment: int = 8) -> int:
    return t.nnz * aligned_record_bytes(t.channels, alignment)


def dense_equivalent_bytes(dims) -> int:
    ha, wa, hb, wb = (int(d) for d in dims)
    return ha * wa * hb * wb * VALUE_BYTES


def max_sites(dims, k: int, symmetric: bool = True) -> int:
    """Upper bound on active sites of a (symmetric) top-K tensor."""
    ha, wa, hb, wb = dims
    return ha * wa * k + (hb * wb * k if symmetric else 0)
