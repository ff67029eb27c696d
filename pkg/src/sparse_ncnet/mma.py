"""Mean matching accuracy against ground-truth homographies."""

from __future__ import annotations

import csv
import io
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from .errors import GeometryError

DEFAULT_THRESHOLDS = tuple(range(1, 11))
REPORT_COLUMNS = ("pair_id", "threshold", "accuracy", "match_count")


@dataclass(frozen=True, eq=False)
class Homography:
    """Invertible 3x3 projective transform, scaled so that ``H[2, 2] == 1``
    whenever that entry is nonzero."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise GeometryError(f"homography must be a finite 3x3 matrix, got shape {m.shape}")
        if m[2, 2] != 0:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise GeometryError("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))


def warp_points(hm: Homography, points) -> np.ndarray:
    """Apply ``hm`` to ``(n, 2)`` ``(x, y)`` points with perspective division."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    q = np.column_stack([p, np.ones(len(p))]) @ hm.matrix.T
    if np.any(np.abs(q[:, 2]) <= 1e-12):
        raise GeometryError("point maps to infinity")
    return q[:, :2] / q[:, 2:3]


def warp(hm: Homography, p) -> Tuple[float, float]:
    x, y = warp_points(hm, [p])[0]
    return float(x), float(y)


def load_homography(path: Union[str, Path]) -> Homography:
    """Read three lines of three whitespace-separated numbers."""
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    if len(rows) != 3 or any(len(r) != 3 for r in rows):
        raise GeometryError(f"{path}: expected 3 lines of 3 numbers")
    return Homography(np.array(rows, dtype=np.float64))


def match_errors(matches, hm: Homography) -> np.ndarray:
    """Endpoint error ``||H(pA) - pB||`` for rows ``(xA, yA, xB, yB, ...)``."""
    m = np.asarray(matches, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] < 4:
        raise ValueError("matches must be rows of at least (xA, yA, xB, yB)")
    return np.linalg.norm(warp_points(hm, m[:, :2]) - m[:, 2:4], axis=1)


def accuracy_from_errors(errors, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> np.ndarray:
    """Fraction of errors strictly below each threshold."""
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise ValueError("cannot compute matching accuracy of an empty match set")
    t = np.asarray(thresholds, dtype=np.float64).reshape(-1)
    if np.any(t <= 0):
        raise ValueError("thresholds must be positive")
    return (e[None, :] < t[:, None]).mean(axis=1)


def mma(matches, hm: Homography, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> np.ndarray:
    return accuracy_from_errors(match_errors(matches, hm), thresholds)


def parse_thresholds(text: str) -> List[float]:
    """``"1:10"`` (inclusive integer range), ``"1:10:0.5"`` or ``"1,3,5"``."""
    text = text.strip()
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) not in (2, 3):
            raise ValueError(f"bad threshold range {text!r}")
        lo, hi = parts[:2]
        step = parts[2] if len(parts) == 3 else 1.0
        if step <= 0 or hi < lo:
            raise ValueError(f"bad threshold range {text!r}")
        out = list(np.arange(lo, hi + step * 0.5, step))
    else:
        out = [float(x) for x in text.split(",") if x.strip()]
    if not out or any(t <= 0 for t in out):
        raise ValueError(f"thresholds must be positive, got {text!r}")
    return [float(t) for t in out]


@dataclass(frozen=True)
class PairEvaluation:
    pair_id: str
    matches: np.ndarray
    homography: Homography
    sequence: str | None = None


def mma_sweep_rows(pairs: Iterable[PairEvaluation], thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> List[tuple]:
    """Per-pair rows plus ``mean:<sequence>`` and overall ``mean`` rows.

    Aggregates average the per-pair accuracy, so every pair weighs the same
    regardless of its match count.
    """
    rows = []
    per_seq: "OrderedDict[str, list]" = OrderedDict()
    per_pair = []
    for p in pairs:
        acc = mma(p.matches, p.homography, thresholds)
        n = len(p.matches)
        per_pair.append((acc, n))
        if p.sequence is not None:
            per_seq.setdefault(p.sequence, []).append((acc, n))
        rows.extend((p.pair_id, t, a, n) for t, a in zip(thresholds, acc))
    groups = [(f"mean:{s}", v) for s, v in per_seq.items()] + ([("mean", per_pair)] if per_pair else [])
    for name, items in groups:
        mean_acc = np.mean([a for a, _ in items], axis=0)
        total = sum(n for _, n in items)
        rows.extend((name, t, a, total) for t, a in zip(thresholds, mean_acc))
    return rows


def format_report_csv(rows: Iterable[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for pair_id, t, a, n in rows:
        w.writerow([pair_id, f"{t:g}", f"{a:.6f}", n])
    return buf.getvalue()


def mma_sweep_report(pairs: Iterable[PairEvaluation], thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> str:
    return format_report_csv(mma_sweep_rows(pairs, thresholds))
