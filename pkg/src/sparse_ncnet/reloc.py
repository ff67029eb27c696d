"""Two-stage match relocalisation on the 2x fine feature grid.

Hard relocalisation picks the best pair of cells between the 2x2 fine blocks
underneath a coarse match. Soft relocalisation then shifts each endpoint by
a softargmax over the similarities in a 3x3 fine neighbourhood.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .corr import pair_dots
from .errors import ShapeError
from .tensor import FeatureMap, Match, RefinedMatch, grid_to_pixel

MODES = ("none", "hard", "hard+soft")
TEMPERATURE_MODES = ("multiply", "divide")
# matches per vectorised batch; bounds the (n, 4, 4, c) float64 temporaries
BATCH = 128

_SUB2 = np.array([(0, 0), (0, 1), (1, 0), (1, 1)], np.int64)
_OFF3 = np.array([(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)], np.int64)


@dataclass(frozen=True)
class RelocConfig:
    temperature: float = 10.0
    mode: str = "hard+soft"
    temperature_mode: str = "multiply"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.temperature_mode not in TEMPERATURE_MODES:
            raise ValueError(f"temperature_mode must be one of {TEMPERATURE_MODES}")

    def scale(self, scores: np.ndarray) -> np.ndarray:
        if self.temperature_mode == "multiply":
            return scores * self.temperature
        return scores / self.temperature


def _check_frame(fine: FeatureMap, coarse_hw, name: str) -> None:
    if coarse_hw is None:
        return
    h, w = coarse_hw
    if (fine.h, fine.w) != (2 * h, 2 * w):
        raise ShapeError(f"fine map {name} is {fine.h}x{fine.w}, expected {2 * h}x{2 * w}")


def hard_reloc_arrays(
    a: np.ndarray, b: np.ndarray, fa: FeatureMap, fb: FeatureMap
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised hard relocalisation.

    ``a`` and ``b`` are ``(n, 2)`` coarse coordinates. Returns fine
    coordinates ``2a + da``, ``2b + db`` and the winning similarity.
    """
    a = np.asarray(a, np.int64).reshape(-1, 2)
    b = np.asarray(b, np.int64).reshape(-1, 2)
    if a.size and (np.any(2 * a + 1 >= (fa.h, fa.w)) or np.any(2 * b + 1 >= (fb.h, fb.w)) or a.min() < 0 or b.min() < 0):
        raise ShapeError("coarse match falls outside the fine feature grid")
    pa = 2 * a[:, None, :] + _SUB2
    pb = 2 * b[:, None, :] + _SUB2
    best = np.empty(len(a), np.int64)
    best_sim = np.empty(len(a), np.float64)
    for s in range(0, len(a), BATCH):
        e = min(s + BATCH, len(a))
        crop_a = fa.values[pa[s:e, :, 0], pa[s:e, :, 1]]
        crop_b = fb.values[pb[s:e, :, 0], pb[s:e, :, 1]]
        sims = pair_dots(crop_a[:, :, None, :], crop_b[:, None, :, :]).reshape(-1, 16)
        best[s:e] = np.argmax(sims, axis=1)
        best_sim[s:e] = sims[np.arange(e - s), best[s:e]]
    n = np.arange(len(a))
    return pa[n, best // 4], pb[n, best % 4], best_sim


def softargmax_offsets(scores: np.ndarray, valid: np.ndarray, cfg: RelocConfig) -> np.ndarray:
    """Expected ``(d_row, d_col)`` over the 3x3 offsets under a softmax of
    ``scores`` (``(n, 9)``); cells where ``valid`` is False get zero weight."""
    z = np.where(valid, cfg.scale(np.asarray(scores, np.float64)), -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=1, keepdims=True)
    return w @ _OFF3.astype(np.float64)


def _crop3(fmap: FeatureMap, centre: np.ndarray):
    pos = centre[:, None, :] + _OFF3
    valid = (pos[..., 0] >= 0) & (pos[..., 0] < fmap.h) & (pos[..., 1] >= 0) & (pos[..., 1] < fmap.w)
    r = np.clip(pos[..., 0], 0, fmap.h - 1)
    c = np.clip(pos[..., 1], 0, fmap.w - 1)
    return fmap.values[r, c], valid


def soft_reloc_arrays(
    ah: np.ndarray, bh: np.ndarray, fa: FeatureMap, fb: FeatureMap, cfg: RelocConfig = RelocConfig()
) -> Tuple[np.ndarray, np.ndarray]:
    """Softargmax displacements for fine-grid matches ``ah -> bh``.

    The A endpoint moves by the softargmax of its 3x3 neighbourhood against
    the B centre descriptor, and the B endpoint likewise against the A centre.
    """
    ah = np.asarray(ah, np.int64).reshape(-1, 2)
    bh = np.asarray(bh, np.int64).reshape(-1, 2)
    da = np.empty(ah.shape, np.float64)
    db = np.empty(bh.shape, np.float64)
    for s in range(0, len(ah), BATCH):
        e = min(s + BATCH, len(ah))
        crop_a, valid_a = _crop3(fa, ah[s:e])
        crop_b, valid_b = _crop3(fb, bh[s:e])
        centre_a = fa.values[ah[s:e, 0], ah[s:e, 1]]
        centre_b = fb.values[bh[s:e, 0], bh[s:e, 1]]
        da[s:e] = softargmax_offsets(pair_dots(crop_a, centre_b[:, None, :]), valid_a, cfg)
        db[s:e] = softargmax_offsets(pair_dots(centre_a[:, None, :], crop_b), valid_b, cfg)
    return da, db


def _pixels(coords: np.ndarray, fmap: FeatureMap) -> np.ndarray:
    sy, sx = fmap.pixel_scale
    return np.stack([grid_to_pixel(coords[:, 1], sx), grid_to_pixel(coords[:, 0], sy)], axis=1)


def _to_refined(a, b, scores, fa, fb, sims=None) -> List[RefinedMatch]:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    px_a, px_b = _pixels(a, fa), _pixels(b, fb)
    sims = [None] * len(a) if sims is None else np.asarray(sims).tolist()
    return [
        RefinedMatch(tuple(ra), tuple(rb), s, tuple(xa), tuple(xb), sim)
        for ra, rb, s, xa, xb, sim in zip(a.tolist(), b.tolist(), scores, px_a.tolist(), px_b.tolist(), sims)
    ]


def hard_reloc(m: Match, fa: FeatureMap, fb: FeatureMap, coarse_a=None, coarse_b=None) -> RefinedMatch:
    _check_frame(fa, coarse_a, "A")
    _check_frame(fb, coarse_b, "B")
    ah, bh, sim = hard_reloc_arrays([m.a], [m.b], fa, fb)
    return _to_refined(ah, bh, [m.score], fa, fb, sim)[0]


def soft_reloc(mh: RefinedMatch, fa: FeatureMap, fb: FeatureMap, cfg: RelocConfig = RelocConfig()) -> RefinedMatch:
    ah = np.asarray(mh.a, np.float64)
    bh = np.asarray(mh.b, np.float64)
    if np.any(ah != np.round(ah)) or np.any(bh != np.round(bh)):
        raise ValueError("soft relocalisation needs integer fine-grid coordinates")
    ah, bh = ah.astype(np.int64)[None], bh.astype(np.int64)[None]
    da, db = soft_reloc_arrays(ah, bh, fa, fb, cfg)
    return _to_refined(ah + da, bh + db, [mh.score], fa, fb, [mh.similarity])[0]


def refine_all(
    ms: Sequence[Match], fa: FeatureMap, fb: FeatureMap, cfg: RelocConfig = RelocConfig(), coarse_a=None, coarse_b=None
) -> List[RefinedMatch]:
    """Relocalise a batch of coarse matches; all modes report fine-grid coordinates."""
    _check_frame(fa, coarse_a, "A")
    _check_frame(fb, coarse_b, "B")
    if not ms:
        return []
    a = np.array([m.a for m in ms], np.int64)
    b = np.array([m.b for m in ms], np.int64)
    scores = [m.score for m in ms]
    if cfg.mode == "none":
        return _to_refined(2 * a, 2 * b, scores, fa, fb)
    ah, bh, sims = hard_reloc_arrays(a, b, fa, fb)
    if cfg.mode == "hard":
        return _to_refined(ah, bh, scores, fa, fb, sims)
    da, db = soft_reloc_arrays(ah, bh, fa, fb, cfg)
    return _to_refined(ah + da, bh + db, scores, fa, fb, sims)
