"""Conditional-independence tests shared by diagnostics and recovery.

Two tests, one interface: (statistic, p_value).

* Partial correlation with a Fisher transform — exact for the jointly
  gaussian case and the workhorse for linear-gaussian mechanisms. Two
  equivalent routes are provided: residual regression (directly on
  columns) and a precision-matrix form (from a covariance, so graph
  recovery can price thousands of tests off one covariance pass).
* Binned mutual information with a stratified permutation null — slower
  but sensitive to nonlinear dependence; conditioning is handled by
  permuting within joint bins of the conditioning set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from . import rng

__all__ = [
    "TestDegenerateError",
    "partial_correlation_test",
    "partial_correlation_from_cov",
    "fisher_p_value",
    "binned_mi_test",
    "DEFAULT_PERMUTATIONS",
    "DEFAULT_BINS",
]

DEFAULT_PERMUTATIONS = 200
DEFAULT_BINS = 6
_RANK_TOL = 1e-10


class TestDegenerateError(ValueError):
    """A test statistic is undefined on the given data."""


def _as_column(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size == 0:
        raise TestDegenerateError("empty column")
    return x


def _residualize(y: np.ndarray, design: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return y - design @ coef


def fisher_p_value(r: float, n: int, k: int) -> float:
    """Two-sided p-value for a partial correlation via Fisher's transform."""
    dof = n - k - 3
    if dof <= 0:
        raise TestDegenerateError(
            f"need more than {k + 3} samples for |C| = {k}, got {n}")
    r = float(np.clip(r, -1 + 1e-12, 1 - 1e-12))
    z = np.arctanh(r) * np.sqrt(dof)
    return float(2.0 * ndtr(-abs(z)))


def partial_correlation_test(x, y, cond: Optional[np.ndarray] = None,
                             ) -> Tuple[float, float]:
    """Partial correlation of x and y given the columns of `cond`."""
    x, y = _as_column(x), _as_column(y)
    n = x.size
    if y.size != n:
        raise ValueError("x and y must have the same length")
    k = 0
    design = np.ones((n, 1))
    if cond is not None and np.size(cond) > 0:
        cond = np.asarray(cond, dtype=float)
        if cond.ndim == 1:
            cond = cond[:, None]
        k = cond.shape[1]
        design = np.column_stack([design, cond])
    rx, ry = _residualize(x, design), _residualize(y, design)
    sx, sy = np.sqrt(rx @ rx), np.sqrt(ry @ ry)
    if sx < _RANK_TOL * np.sqrt(n) or sy < _RANK_TOL * np.sqrt(n):
        raise TestDegenerateError(
            "a column is (conditionally) constant; correlation undefined")
    r = float((rx @ ry) / (sx * sy))
    return r, fisher_p_value(r, n, k)


def partial_correlation_from_cov(cov: np.ndarray, i: int, j: int,
                                 cond: Sequence[int], n: int,
                                 ) -> Tuple[float, float]:
    """Same test computed from a covariance matrix (precision form)."""
    idx = [i, j] + list(cond)
    sub = np.asarray(cov)[np.ix_(idx, idx)]
    try:
        prec = np.linalg.inv(sub)
    except np.linalg.LinAlgError as exc:
        raise TestDegenerateError(f"singular covariance block: {exc}") from exc
    denom = prec[0, 0] * prec[1, 1]
    if denom <= 0:
        raise TestDegenerateError("non-positive precision diagonal")
    r = float(-prec[0, 1] / np.sqrt(denom))
    return r, fisher_p_value(r, n, len(cond))


def _quantile_bins(x: np.ndarray, bins: int) -> np.ndarray:
    edges = np.quantile(x, np.linspace(0, 1, bins + 1)[1:-1])
    return np.searchsorted(edges, x, side="right")


def _strata_codes(cond: Optional[np.ndarray], bins: int, n: int) -> np.ndarray:
    if cond is None or np.size(cond) == 0:
        return np.zeros(n, dtype=np.int64)
    cond = np.asarray(cond, dtype=float)
    if cond.ndim == 1:
        cond = cond[:, None]
    codes = np.zeros(n, dtype=np.int64)
    for j in range(cond.shape[1]):
        codes = codes * bins + _quantile_bins(cond[:, j], bins)
    return codes


def _mi_from_counts(bx: np.ndarray, by: np.ndarray, strata: np.ndarray,
                    bins: int) -> float:
    total = 0.0
    n = bx.size
    for s in np.unique(strata):
        mask = strata == s
        ns = int(mask.sum())
        if ns < 2:
            continue
        joint = np.zeros((bins, bins))
        np.add.at(joint, (bx[mask], by[mask]), 1.0)
        joint /= ns
        px = joint.sum(axis=1, keepdims=True)
        py = joint.sum(axis=0, keepdims=True)
        nz = joint > 0
        total += (ns / n) * float(
            (joint[nz] * np.log(joint[nz] / (px @ py)[nz])).sum())
    return total


def binned_mi_test(x, y, cond: Optional[np.ndarray] = None,
                   bins: int = DEFAULT_BINS,
                   permutations: int = DEFAULT_PERMUTATIONS,
                   seed: int = 0) -> Tuple[float, float]:
    """Conditional mutual information with a within-stratum permutation null.

    The p-value uses the add-one estimator (1 + worse) / (1 + permutations),
    so it can never reach zero and stays valid for any permutation count.
    """
    x, y = _as_column(x), _as_column(y)
    n = x.size
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise TestDegenerateError("constant column; mutual information undefined")
    bx, by = _quantile_bins(x, bins), _quantile_bins(y, bins)
    strata = _strata_codes(cond, bins, n)
    observed = _mi_from_counts(bx, by, strata, bins)
    worse = 0
    order = np.argsort(strata, kind="stable")
    for p in range(permutations):
        perm_by = by.copy()
        # Permute y-bins within each stratum only.
        start = 0
        while start < n:
            s = strata[order[start]]
            end = start
            while end < n and strata[order[end]] == s:
                end += 1
            block = order[start:end]
            shuffle = rng.permutation(seed, p * 1021 + int(s) % 1021,
                                      block.size)
            perm_by[block] = by[block[shuffle]]
            start = end
        if _mi_from_counts(bx, perm_by, strata, bins) >= observed - 1e-15:
            worse += 1
    p_value = (1.0 + worse) / (1.0 + permutations)
    return float(observed), float(p_value)
