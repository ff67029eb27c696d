"""Match extraction from a filtered correlation tensor."""

from __future__ import annotations

from typing import Iterable, List

import numpy as np

from .errors import ShapeError
from .tensor import Match, SparseTensor4D


def _group_winners(groups: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Index of the max-value site in each group; ties go to the earliest site.

    Sites are in canonical order, so "earliest" is the smallest linear index.
    """
    order = np.lexsort((np.arange(values.size), -values, groups))
    g = groups[order]
    first = np.ones(g.size, bool)
    first[1:] = g[1:] != g[:-1]
    return order[first]


def extract_match_indices(ct: SparseTensor4D) -> np.ndarray:
    """Sorted site indices that win their A-cell slice or their B-cell slice."""
    if ct.channels != 1:
        raise ShapeError(f"match extraction needs a 1-channel tensor, got {ct.channels}")
    if ct.nnz == 0:
        return np.zeros(0, np.int64)
    _, wa, _, wb = ct.dims
    v = ct.values[:, 0].astype(np.float64)
    a_cell = ct.coords[:, 0] * wa + ct.coords[:, 1]
    b_cell = ct.coords[:, 2] * wb + ct.coords[:, 3]
    return np.union1d(_group_winners(b_cell, v), _group_winners(a_cell, v))


def extract_matches(ct: SparseTensor4D) -> List[Match]:
    """A site is a match if it is the argmax over A for its B cell, or over B
    for its A cell. Inactive entries never compete."""
    idx = extract_match_indices(ct)
    coords = ct.coords[idx].tolist()
    scores = ct.values[idx, 0].tolist()
    return [Match((i, j), (k, l), s) for (i, j, k, l), s in zip(coords, scores)]


def rank_matches(ms: Iterable[Match], top_n: int | None = None) -> List[Match]:
    """Sort by descending score, then by A coordinate, then B coordinate."""
    ranked = sorted(ms, key=lambda m: (-m.score, m.a, m.b))
    return ranked if top_n is None else ranked[:top_n]
