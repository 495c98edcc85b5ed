"""Counter-based random streams for reproducible sampling.

Every draw in the package flows through one of these helpers. Streams are
keyed, not sequential: each (seed, level, index, dim) tuple owns an
independent Philox-4x64 stream, and position r in the stream belongs to row
r of a batch. Two consequences the rest of the code relies on:

* prefix stability — the first n draws of a size-2n request equal the
  size-n request, because the Philox counter starts at zero either way;
* order independence — variables can be sampled in any order (or in
  parallel) without perturbing each other's streams.

Gaussian variates are produced by the inverse-CDF transform of a 53-bit
uniform rather than ziggurat/polar methods, so the mapping from raw
counter words to values is a closed formula that other implementations
can reproduce exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["stream_key", "uniforms", "gaussians", "permutation"]

_U64 = np.uint64
_INV_2_53 = 2.0 ** -53
_HALF_ULP = 2.0 ** -54

# Field widths for packing (level, index, dim) into the second key word.
# Level < 2^8, index < 2^24, dim < 2^32 — far beyond any model this
# package can represent.
_LEVEL_SHIFT = 56
_INDEX_SHIFT = 32


def stream_key(seed: int, level: int, index: int, dim: int = 0) -> np.ndarray:
    """Derive the 2-word Philox key for one scalar variable dimension."""
    if not 0 <= level < 2 ** 8:
        raise ValueError(f"level out of key range: {level}")
    if not 0 <= index < 2 ** 24:
        raise ValueError(f"index out of key range: {index}")
    if not 0 <= dim < 2 ** 32:
        raise ValueError(f"dim out of key range: {dim}")
    tag = (level << _LEVEL_SHIFT) | (index << _INDEX_SHIFT) | dim
    return np.array([seed & 0xFFFFFFFFFFFFFFFF, tag], dtype=_U64)


def uniforms(seed: int, level: int, index: int, n: int, dim: int = 0) -> np.ndarray:
    """n open-interval uniforms in (0, 1) for rows 0..n-1 of one stream.

    u_r = (word_r >> 11) * 2^-53 + 2^-54, where word_r is the r-th raw
    64-bit Philox output. The offset keeps 0 and 1 unreachable so the
    inverse CDF below never overflows.
    """
    bg = np.random.Philox(key=stream_key(seed, level, index, dim))
    words = bg.random_raw(n)
    return (words >> _U64(11)).astype(np.float64) * _INV_2_53 + _HALF_ULP


def gaussians(seed: int, level: int, index: int, n: int, dim: int = 0) -> np.ndarray:
    """n standard normals via the inverse CDF of `uniforms`."""
    return ndtri(uniforms(seed, level, index, n, dim))


def permutation(seed: int, tag: int, n: int) -> np.ndarray:
    """Deterministic permutation of range(n), independent of value streams.

    Used for epoch shuffling in training; keyed under a reserved level so
    it can never collide with a variable stream.
    """
    bg = np.random.Philox(key=stream_key(seed, 255, tag & (2 ** 24 - 1)))
    return np.random.Generator(bg).permutation(n)
