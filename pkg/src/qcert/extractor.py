"""Toeplitz-hash randomness extraction.

Universal hashing with a seeded Toeplitz matrix: from k raw symbols carrying
a certified h bits of min-entropy each, floor(k*h) - security_margin output
bits are extracted.  The matrix is never materialized in full; row windows
of the defining bit sequence are multiplied in chunks.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InsufficientEntropyError, InvalidParametersError

SECURITY_MARGIN = 64
_CHUNK_ROWS = 512


def _as_bit_matrix(raw) -> np.ndarray:
    if isinstance(raw, np.ndarray):
        mat = raw.astype(np.uint8)
    else:
        rows = [[int(c) for c in str(r)] for r in raw]
        mat = np.array(rows, dtype=np.uint8)
    if mat.ndim != 2 or mat.size == 0:
        raise InvalidParametersError("raw input must be a non-empty k x n bit matrix")
    if (mat > 1).any():
        raise InvalidParametersError("raw input must be binary")
    return mat


def extracted_length(k_symbols: int, h_min_lower: float,
                     security_margin: int = SECURITY_MARGIN) -> int:
    return int(math.floor(k_symbols * h_min_lower)) - security_margin


def extract_bits(raw, h_min_lower: float, seed: int,
                 security_margin: int = SECURITY_MARGIN) -> np.ndarray:
    """Extract floor(k*h) - margin bits from k sampled click patterns.

    Deterministic given the seed.  Raises when the certified entropy budget
    leaves nothing to extract.
    """
    if h_min_lower < 0:
        raise InvalidParametersError("h_min_lower must be >= 0")
    mat = _as_bit_matrix(raw)
    k, n = mat.shape
    out_len = extracted_length(k, h_min_lower, security_margin)
    if out_len <= 0:
        raise InsufficientEntropyError(
            f"{k} symbols at {h_min_lower} bits each leave {out_len} bits after "
            f"the {security_margin}-bit margin"
        )
    x = mat.reshape(-1)
    in_len = x.size
    rng = np.random.default_rng(seed)
    diag = rng.integers(0, 2, size=out_len + in_len - 1, dtype=np.uint8)
    # Toeplitz row i is diag[i : i + in_len] reversed
    out = np.empty(out_len, dtype=np.uint8)
    xi = x.astype(np.int64)
    for lo in range(0, out_len, _CHUNK_ROWS):
        hi = min(lo + _CHUNK_ROWS, out_len)
        windows = np.lib.stride_tricks.sliding_window_view(
            diag[lo : hi + in_len - 1], in_len
        )[:, ::-1]
        out[lo:hi] = (windows.astype(np.int64) @ xi) & 1
    return out


def bits_to_string(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in bits)
