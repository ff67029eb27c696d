"""Slow reference implementations used to cross-check the fast paths.

Everything here loops in plain Python over individual cells/sites and shares
no code with the vectorised implementations beyond the data types.
"""

from __future__ import annotations

import itertools
from typing import Dict, List, Set, Tuple

import numpy as np

from .tensor import FeatureMap, SparseTensor4D


def brute_topk_sites(src: FeatureMap, dst: FeatureMap, k: int) -> Dict[tuple, float]:
    """One-sided top-K by full sort of every inner product per source cell."""
    out = {}
    for i, j in itertools.product(range(src.h), range(src.w)):
        a = src.values[i, j].astype(np.float64)
        cands = []
        for kk, ll in itertools.product(range(dst.h), range(dst.w)):
            b = dst.values[kk, ll].astype(np.float64)
            cands.append((-float(np.dot(a, b)), kk * dst.w + ll, kk, ll))
        cands.sort()
        for neg, _, kk, ll in cands[:k]:
            out[(i, j, kk, ll)] = -neg
    return out


def brute_symmetric_sites(fa: FeatureMap, fb: FeatureMap, k: int) -> Dict[tuple, float]:
    ab = brute_topk_sites(fa, fb, k)
    ba = brute_topk_sites(fb, fa, k)
    out = dict(ab)
    for (k_, l_, i, j), v in ba.items():
        out[(i, j, k_, l_)] = out.get((i, j, k_, l_), 0.0) + v
    return out


def dense_argmax_matches(dense: np.ndarray) -> Set[Tuple[tuple, tuple]]:
    """Match rule evaluated on a dense 4D array where inactive entries are -inf.

    Ties go to the smallest linear index (first occurrence in row-major order).
    """
    ha, wa, hb, wb = dense.shape
    found = set()
    for k, l in itertools.product(range(hb), range(wb)):
        col = dense[:, :, k, l]
        if np.isneginf(col).all():
            continue
        i, j = np.unravel_index(int(np.argmax(col)), (ha, wa))
        found.add(((int(i), int(j)), (k, l)))
    for i, j in itertools.product(range(ha), range(wa)):
        row = dense[i, j]
        if np.isneginf(row).all():
            continue
        k, l = np.unravel_index(int(np.argmax(row)), (hb, wb))
        found.add(((i, j), (int(k), int(l))))
    return found


def naive_submanifold_conv(t: SparseTensor4D, kernel: np.ndarray, bias: np.ndarray, relu: bool) -> np.ndarray:
    """Per-site, per-offset loop using a dict lookup for neighbours."""
    lookup = {tuple(c): v.astype(np.float64) for c, v in zip(t.coords.tolist(), t.values)}
    out = np.zeros((t.nnz, kernel.shape[-1]))
    for n, c in enumerate(t.coords.tolist()):
        acc = bias.astype(np.float64).copy()
        for d in itertools.product((-1, 0, 1), repeat=4):
            v = lookup.get(tuple(ci + di for ci, di in zip(c, d)))
            if v is not None:
                acc += v @ kernel[tuple(di + 1 for di in d)].astype(np.float64)
        out[n] = np.maximum(acc, 0) if relu else acc
    return out


def random_feature_map(rng: np.random.Generator, h: int, w: int, c: int, scale=(1.0, 1.0)) -> FeatureMap:
    return FeatureMap.from_array(rng.standard_normal((h, w, c)), scale)


def random_sparse_tensor(rng: np.random.Generator, dims, n_sites: int, channels: int = 1) -> SparseTensor4D:
    total = int(np.prod(dims))
    keys = rng.choice(total, size=min(n_sites, total), replace=False)
    coords = np.stack(np.unravel_index(keys, dims), axis=1)
    return SparseTensor4D.from_sites(dims, coords, rng.standard_normal((len(keys), channels)))


def selfcheck(seed: int = 0, instances: int = 20, tol: float = 1e-5) -> List[str]:
    """Run seeded oracle comparisons; returns human-readable failures (empty if all pass)."""
    from .corr import CorrConfig, symmetric_correlation
    from .ncn import dense_conv4d, dense_network_forward, network_forward, seeded_init, submanifold_conv

    rng = np.random.default_rng(seed)
    failures = []
    for n in range(instances):
        dims = tuple(int(x) for x in rng.integers(2, 7, size=4))
        t = random_sparse_tensor(rng, dims, int(rng.integers(1, 60)))
        active = np.zeros(dims, bool)
        active[tuple(t.coords.T)] = True
        net = seeded_init(int(rng.integers(1 << 31)), bias=True)
        layer = net.layers[0]
        sparse = submanifold_conv(t, layer).values
        dense = dense_conv4d(t.to_dense(), layer)[tuple(t.coords.T)]
        err = float(np.max(np.abs(sparse - dense)))
        if err > tol:
            failures.append(f"conv instance {n}: max abs error {err:.3g}")
        sparse = network_forward(net, t).values
        dense = dense_network_forward(net, t.to_dense(), active)[tuple(t.coords.T)]
        err = float(np.max(np.abs(sparse - dense)))
        if err > tol:
            failures.append(f"network instance {n}: max abs error {err:.3g}")

        h, w, c = (int(x) for x in rng.integers(2, 6, size=3))
        fa = random_feature_map(rng, h, w, c)
        fb = random_feature_map(rng, int(rng.integers(2, 6)), int(rng.integers(2, 6)), c)
        k = int(rng.integers(1, min(fa.h * fa.w, fb.h * fb.w) + 1))
        got = symmetric_correlation(fa, fb, CorrConfig(k)).to_dict()
        want = brute_symmetric_sites(fa, fb, k)
        if set(got) != set(want):
            failures.append(f"correlation instance {n}: site sets differ")
        else:
            err = max(abs(got[s] - want[s]) for s in want)
            if err > tol:
                failures.append(f"correlation instance {n}: max abs error {err:.3g}")
    return failures
