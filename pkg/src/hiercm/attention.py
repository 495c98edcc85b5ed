"""Numeric kernels for schedule-blended cross-attention conditioning.

The conditioning scheme keeps two views of a prompt: one global attention
map for the whole combination and M local maps, one per sub-concept. A
cosine schedule s(t) blends them across denoising steps — early (noisy)
steps follow the global map, late steps the averaged locals:

    A_t = (1 - s(t)) * A_global + s(t) / M * sum_m A_local[m]
    s(t) = cos(pi * t / (2 (T - 1))),  s(0) = 1,  s(T-1) = 0

Overlap between local maps is penalized through a DICE score

    D(H1, H2) = 2 * sum_ij H1_ij H2_ij / (||H1||_1 + ||H2||_1)

summed over all ordered pairs of locals (each unordered pair counts
twice; the double sum is kept literal on purpose). The combined training
objective is  L = L_d + lambda * L_n  with lambda defaulting to 1e-4.

All kernels are pure float64 numpy. Endpoint cases of the schedule and
the interpolation are returned through explicit branches so they are
bit-exact, not merely within rounding error.

Note on the DICE numerator: we read the trace form as the elementwise
overlap sum_ij H1_ij * H2_ij (= tr(H1 @ H2.T)), which is the standard
soft-DICE numerator and is well defined for rectangular maps. The strict
matrix-product trace tr(H1 @ H2) differs for non-symmetric square maps;
it is available behind ``strict_trace=True`` for comparison. The ratio
is scale-covariant, D(c*H1, c*H2) = c * D(H1, H2), and lands in [0, 1]
whenever entries lie in [0, 1] (binary masks, softmax maps).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

__all__ = [
    "DEFAULT_SPARSITY_WEIGHT",
    "AttentionStack",
    "schedule",
    "interpolate_attention",
    "dice_overlap",
    "sparsity_loss",
    "combined_loss",
    "grad_sparsity_loss",
]

# Default weight of the overlap penalty in the combined objective.
DEFAULT_SPARSITY_WEIGHT = 1e-4


def _as_map(values, name: str = "map") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} contains negative entries")
    return arr


@dataclass(frozen=True)
class AttentionStack:
    """One global map plus M local maps at step t of a T-step schedule."""

    global_map: np.ndarray
    locals: List[np.ndarray]
    t: int
    total_steps: int

    def __post_init__(self):
        g = _as_map(self.global_map, "global map")
        object.__setattr__(self, "global_map", g)
        if len(self.locals) < 1:
            raise ValueError("need at least one local map")
        checked = []
        for i, loc in enumerate(self.locals):
            m = _as_map(loc, f"local map {i}")
            if m.shape != g.shape:
                raise ValueError(
                    f"local map {i} shape {m.shape} != global shape {g.shape}"
                )
            checked.append(m)
        object.__setattr__(self, "locals", checked)
        if self.total_steps < 2:
            raise ValueError("total_steps must be >= 2")
        if not 0 <= self.t <= self.total_steps - 1:
            raise ValueError(f"step {self.t} outside [0, {self.total_steps - 1}]")


def schedule(t: int, total_steps: int) -> float:
    """Blend weight s(t) = cos(pi*t / (2(T-1))) with bit-exact endpoints."""
    if total_steps < 2:
        raise ValueError("total_steps must be >= 2")
    if not 0 <= t <= total_steps - 1:
        raise ValueError(f"step {t} outside [0, {total_steps - 1}]")
    if t == 0:
        return 1.0
    if t == total_steps - 1:
        return 0.0
    return float(np.cos(np.pi * t / (2.0 * (total_steps - 1))))


def interpolate_attention(stack: AttentionStack) -> np.ndarray:
    """Blend the global map with the local average at the stack's step.

    The endpoints short-circuit: at t = T-1 the result is a copy of the
    global map, at t = 0 the exact mean of the locals.
    """
    s = schedule(stack.t, stack.total_steps)
    local_sum = np.add.reduce(stack.locals)
    m = len(stack.locals)
    if s == 0.0:
        return stack.global_map.copy()
    if s == 1.0:
        return local_sum / m
    return (1.0 - s) * stack.global_map + (s / m) * local_sum


def dice_overlap(h1, h2, strict_trace: bool = False) -> float:
    """Normalized overlap of two non-negative attention maps.

    With ``strict_trace`` the numerator is tr(H1 @ H2) instead of the
    elementwise sum (square maps only); the denominator is the entrywise
    1-norm either way.
    """
    a = _as_map(h1, "h1")
    b = _as_map(h2, "h2")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    denom = a.sum() + b.sum()
    if denom == 0.0:
        raise ValueError("overlap undefined: both maps are exactly zero")
    if strict_trace:
        if a.shape[0] != a.shape[1]:
            raise ValueError("strict trace mode needs square maps")
        num = 2.0 * float(np.trace(a @ b))
    else:
        num = 2.0 * float((a * b).sum())
    return num / denom


def sparsity_loss(local_maps: Sequence[np.ndarray]) -> float:
    """Sum of DICE overlaps over ordered pairs of distinct local maps.

    The double sum counts every unordered pair twice; a single map gives
    an empty sum, hence exactly 0.0.
    """
    maps = [_as_map(m, f"local map {i}") for i, m in enumerate(local_maps)]
    if not maps:
        raise ValueError("need at least one local map")
    shape = maps[0].shape
    for i, m in enumerate(maps):
        if m.shape != shape:
            raise ValueError(f"local map {i} shape {m.shape} != {shape}")
    total = 0.0
    for i in range(len(maps)):
        for j in range(len(maps)):
            if i != j:
                total += dice_overlap(maps[i], maps[j])
    return total


def combined_loss(denoise_loss: float, local_maps: Sequence[np.ndarray],
                  weight: float = DEFAULT_SPARSITY_WEIGHT) -> float:
    """Total objective: denoising loss plus weighted overlap penalty."""
    if not np.isfinite(denoise_loss):
        raise ValueError("denoise_loss must be finite")
    if weight < 0:
        raise ValueError("weight must be >= 0")
    if weight == 0.0:
        # Skip the overlap term entirely so weight=0 reduces to the
        # denoising loss even when some pair of locals is all-zero.
        return float(denoise_loss)
    return float(denoise_loss) + weight * sparsity_loss(local_maps)


def grad_sparsity_loss(local_maps: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Analytic gradient of `sparsity_loss` w.r.t. each local map.

    For one ordered pair, D = N / S with N = 2 sum(A*B) and
    S = sum(A) + sum(B), so dD/dA_ij = 2 B_ij / S - D / S. Each
    unordered pair appears twice in the loss, doubling the contribution.
    Entries are non-negative by the map invariant, so d||A||_1/dA_ij = 1
    everywhere (the right-hand derivative at zero).
    """
    maps = [_as_map(m, f"local map {i}") for i, m in enumerate(local_maps)]
    if not maps:
        raise ValueError("need at least one local map")
    shape = maps[0].shape
    for i, m in enumerate(maps):
        if m.shape != shape:
            raise ValueError(f"local map {i} shape {m.shape} != {shape}")
    sums = [m.sum() for m in maps]
    grads = [np.zeros(shape) for _ in maps]
    for i in range(len(maps)):
        for j in range(i + 1, len(maps)):
            s = sums[i] + sums[j]
            if s == 0.0:
                raise ValueError("overlap undefined: both maps are exactly zero")
            d = 2.0 * float((maps[i] * maps[j]).sum()) / s
            grads[i] += 2.0 * (2.0 * maps[j] / s - d / s)
            grads[j] += 2.0 * (2.0 * maps[i] / s - d / s)
    return grads
