"""Storage arithmetic for sparse vs. dense correlation tensors."""

from __future__ import annotations

from .corr import COORD_BYTES, VALUE_BYTES, aligned_record_bytes, dense_equivalent_bytes, max_sites

MB = 1000**2
MIB = 1024**2


def memory_report(ha: int, wa: int, hb: int, wb: int, k: int = 10, sites: int | None = None, channels: int = 1) -> dict:
    """Footprint of a 4D correlation tensor stored densely and as top-K COO.

    ``sites`` defaults to the symmetric top-K bound ``(ha*wa + hb*wb) * k``.
    Sparse sizes are given for the packed record (16 coordinate bytes plus
    4 bytes per channel) and for the record padded to 8-byte alignment.
    """
    dims = (ha, wa, hb, wb)
    if min(dims) < 1 or k < 1:
        raise ValueError("dims and k must be positive")
    bound = max_sites(dims, k)
    n = bound if sites is None else int(sites)
    if n < 0:
        raise ValueError("sites must be >= 0")
    dense = dense_equivalent_bytes(dims)
    raw = n * (COORD_BYTES + VALUE_BYTES * channels)
    aligned = n * aligned_record_bytes(channels)
    return {
        "dims": dims,
        "k": k,
        "site_bound": bound,
        "sites": n,
        "dense_bytes": dense,
        "dense_mb": dense / MB,
        "dense_mib": dense / MIB,
        "sparse_raw_bytes": raw,
        "sparse_raw_mb": raw / MB,
        "sparse_raw_mib": raw / MIB,
        "sparse_aligned_bytes": aligned,
        "sparse_aligned_mb": aligned / MB,
        "sparse_aligned_mib": aligned / MIB,
        "dense_to_sparse_ratio": dense / aligned if aligned else float("inf"),
    }
