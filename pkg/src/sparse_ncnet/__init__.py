"""Sparse neighbourhood consensus matching on top-K correlation tensors."""

__version__ = "0.1.0"

from .corr import CorrConfig, dense_equivalent_bytes, storage_bytes, symmetric_correlation, topk_correlation
from .featio import extract_patch_descriptors, load_feature_map, maxpool2x2, save_feature_map
from .matchx import extract_matches, rank_matches
from .mma import Homography, mma, warp
from .ncn import (
    ConvLayer,
    ConvNetwork,
    dense_conv4d,
    load_weights,
    network_forward,
    permutation_invariant_forward,
    save_weights,
    seeded_init,
    submanifold_conv,
)
from .pipeline import PipelineConfig, match_pair
from .reloc import RelocConfig, hard_reloc, refine_all, soft_reloc
from .tensor import FeatureMap, Match, RefinedMatch, SparseTensor4D, add_sparse, transpose4d

__all__ = [
    "CorrConfig",
    "ConvLayer",
    "ConvNetwork",
    "FeatureMap",
    "Homography",
    "Match",
    "PipelineConfig",
    "RefinedMatch",
    "RelocConfig",
    "SparseTensor4D",
    "add_sparse",
    "dense_conv4d",
    "dense_equivalent_bytes",
    "extract_matches",
    "extract_patch_descriptors",
    "hard_reloc",
    "load_feature_map",
    "load_weights",
    "match_pair",
    "maxpool2x2",
    "mma",
    "network_forward",
    "permutation_invariant_forward",
    "rank_matches",
    "refine_all",
    "save_feature_map",
    "save_weights",
    "seeded_init",
    "soft_reloc",
    "storage_bytes",
    "submanifold_conv",
    "symmetric_correlation",
    "topk_correlation",
    "transpose4d",
    "warp",
]
