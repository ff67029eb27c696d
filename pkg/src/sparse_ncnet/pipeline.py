"""End-to-end matching: fine features in, pixel correspondences out."""

from __future__ import annotations

import csv
import io
import logging
import time
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, TextIO, Tuple, Union

from .corr import CorrConfig, aligned_storage_bytes, dense_equivalent_bytes, max_sites, storage_bytes, symmetric_correlation
from .errors import ShapeError
from .featio import load_feature_map, maxpool2x2
from .matchx import extract_matches, rank_matches
from .ncn import ConvNetwork, load_weights, permutation_invariant_forward, seeded_init
from .reloc import RelocConfig, refine_all
from .tensor import FeatureMap, RefinedMatch

log = logging.getLogger(__name__)

CSV_HEADER = ("xA", "yA", "xB", "yB", "score")


@dataclass(frozen=True)
class PipelineConfig:
    corr: CorrConfig = field(default_factory=CorrConfig)
    reloc: RelocConfig = field(default_factory=RelocConfig)
    top_n: Optional[int] = 1000
    weights_path: Optional[str] = None
    seed: int = 0
    threads: int = 1
    track_memory: bool = False

    def __post_init__(self):
        if self.top_n is not None and self.top_n < 0:
            raise ValueError(f"top_n must be >= 0, got {self.top_n}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")

    def network(self) -> ConvNetwork:
        if self.weights_path:
            return load_weights(self.weights_path)
        return seeded_init(self.seed)


@dataclass
class PairStats:
    coarse_dims: Tuple[int, int, int, int]
    sites: int
    site_bound: int
    storage_bytes: int
    aligned_storage_bytes: int
    dense_equivalent_bytes: int
    raw_matches: int
    matches: int
    seconds: float
    peak_traced_bytes: Optional[int] = None


@dataclass
class PairResult:
    matches: List[RefinedMatch]
    stats: PairStats


def _peak_since(baseline: int) -> int:
    _, peak = tracemalloc.get_traced_memory()
    return peak - baseline


def match_pair_detailed(
    fine_a: FeatureMap, fine_b: FeatureMap, cfg: PipelineConfig = PipelineConfig(), net: ConvNetwork | None = None
) -> PairResult:
    """Run the whole matcher on one pair of 2x-resolution feature maps.

    With ``cfg.track_memory`` the peak of traced allocations made while the
    pair is processed is reported (input maps excluded).
    """
    if fine_a.c != fine_b.c:
        raise ShapeError(f"channel mismatch: {fine_a.c} vs {fine_b.c}")
    if fine_a.h % 2 or fine_a.w % 2 or fine_b.h % 2 or fine_b.w % 2:
        raise ShapeError("fine feature maps must have even height and width")
    net = cfg.network() if net is None else net
    baseline = None
    if cfg.track_memory:
        if not tracemalloc.is_tracing():
            tracemalloc.start()
        tracemalloc.reset_peak()
        baseline = tracemalloc.get_traced_memory()[0]
    t0 = time.perf_counter()

    coarse_a, coarse_b = maxpool2x2(fine_a), maxpool2x2(fine_b)
    corr = symmetric_correlation(coarse_a, coarse_b, cfg.corr, threads=cfg.threads)
    coarse_hw_a, coarse_hw_b = coarse_a.shape[:2], coarse_b.shape[:2]
    del coarse_a, coarse_b
    bound = max_sites(corr.dims, cfg.corr.k, cfg.corr.symmetric)
    if corr.nnz > bound:
        raise AssertionError(f"{corr.nnz} sites exceed the bound {bound}")
    filtered = permutation_invariant_forward(net, corr)
    raw = extract_matches(filtered)
    ranked = rank_matches(raw, cfg.top_n)
    refined = refine_all(ranked, fine_a, fine_b, cfg.reloc, coarse_hw_a, coarse_hw_b)

    stats = PairStats(
        coarse_dims=corr.dims,
        sites=corr.nnz,
        site_bound=bound,
        storage_bytes=storage_bytes(corr),
        aligned_storage_bytes=aligned_storage_bytes(corr),
        dense_equivalent_bytes=dense_equivalent_bytes(corr.dims),
        raw_matches=len(raw),
        matches=len(refined),
        seconds=time.perf_counter() - t0,
        peak_traced_bytes=_peak_since(baseline) if baseline is not None else None,
    )
    log.debug("pair done: %s", stats)
    return PairResult(refined, stats)


def match_pair(
    fine_a: FeatureMap, fine_b: FeatureMap, cfg: PipelineConfig = PipelineConfig(), net: ConvNetwork | None = None
) -> List[RefinedMatch]:
    return match_pair_detailed(fine_a, fine_b, cfg, net).matches


def format_matches_csv(matches: Sequence[RefinedMatch]) -> str:
    buf = io.StringIO()
    write_matches_csv(buf, matches)
    return buf.getvalue()


def write_matches_csv(out: Union[TextIO, str, Path], matches: Sequence[RefinedMatch]) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_matches_csv(fh, matches)
        return
    out.write(",".join(CSV_HEADER) + "\n")
    for m in matches:
        out.write("%.6f,%.6f,%.6f,%.6f,%.6f\n" % (*m.pixel_a, *m.pixel_b, m.score))


def read_matches_csv(path: Union[str, Path]) -> List[Tuple[float, float, float, float, float]]:
    """Rows of ``(xA, yA, xB, yB, score)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        return [tuple(float(x) for x in row) for row in reader if row]


def match_report(pairs: Sequence[Tuple[str, str]], cfg: PipelineConfig = PipelineConfig()) -> dict:
    """Match every ``(featA, featB)`` file pair and summarise cost and output size."""
    net = cfg.network()
    inner = PipelineConfig(cfg.corr, cfg.reloc, cfg.top_n, cfg.weights_path, cfg.seed, 1, False)

    def run(pair):
        path_a, path_b = pair
        res = match_pair_detailed(load_feature_map(path_a), load_feature_map(path_b), inner, net)
        return {"feature_a": str(path_a), "feature_b": str(path_b), **asdict(res.stats)}

    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        rows = list(pool.map(run, pairs))
    return {
        "pairs": rows,
        "summary": {
            "pair_count": len(rows),
            "total_seconds": time.perf_counter() - t0,
            "total_matches": sum(r["matches"] for r in rows),
            "peak_sites": max((r["sites"] for r in rows), default=0),
            "total_storage_bytes": sum(r["storage_bytes"] for r in rows),
            "total_dense_equivalent_bytes": sum(r["dense_equivalent_bytes"] for r in rows),
        },
    }
