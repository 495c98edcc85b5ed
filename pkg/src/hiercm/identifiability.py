"""Diagnostics for when latents are recoverable up to permutation.

Four checks, each mapped to one question about a model (or a batch):

* `check_sufficient_variability` — do the conditionals move enough with
  their parents? The probe is the vector of first and second partial
  log-density derivatives of each child at a fixed point, evaluated
  across anchor parent values; recoverability needs the anchor-to-anchor
  differences of that vector to span all 2n directions.
* `check_conditional_independence` — are same-level latents independent
  given the level above (structurally, or empirically on a batch)?
* `check_invertibility` — is the map from a level (plus downstream
  noise) to the observation injective where it matters? Tested by the
  smallest singular value of a finite-difference Jacobian, after an
  honest dimension count.
* `match_components` — given recovered latents, find the permutation
  aligning them with references, score it by rank correlation, and flag
  whether each aligned pair is related by a monotone (hence invertible)
  transform.

Verdicts distinguish "violated" (a structural rank bound makes the span
impossible) from "not-verified" (the randomized search simply failed):
a negative search result is never reported as a counterexample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import rng
from .independence import (
    DEFAULT_BINS,
    DEFAULT_PERMUTATIONS,
    TestDegenerateError,
    binned_mi_test,
    partial_correlation_test,
)
from .model import HierModel, MechanismSpec, parents, validate
from .sampling import SampleBatch, forward_from_level, noise_dims, sample

__all__ = [
    "UnsupportedFamilyError",
    "ConstantColumnError",
    "PASS",
    "VIOLATED",
    "NOT_VERIFIED",
    "log_density_derivatives",
    "structural_rank_bound",
    "VariabilityReport",
    "check_sufficient_variability",
    "CIReport",
    "check_conditional_independence",
    "InvertibilityReport",
    "check_invertibility",
    "MatchResult",
    "match_components",
]

PASS = "pass"
VIOLATED = "violated"
NOT_VERIFIED = "not-verified"

MIN_CI_SAMPLES = 1000
ANALYTIC_RANK_TOL = 1e-8
FD_RANK_TOL = 1e-4


class UnsupportedFamilyError(ValueError):
    """The requested derivative has no smooth density to differentiate."""


class ConstantColumnError(ValueError):
    """A component is constant, so rank correlation is undefined."""


def _all_present(model: HierModel) -> Tuple[int, ...]:
    return tuple(model.cardinality(i) - 1 for i in range(1, model.n_d + 1))


def _smooth_children(model: HierModel, level: int) -> List:
    children = model.level_vars(level + 1)
    for v in children:
        mech = model.mechanisms[v]
        try:
            mech.conditional_gaussian(np.zeros((1, max(1, len(parents(model, v))))))
        except ValueError as exc:
            raise UnsupportedFamilyError(
                f"{v.name()}: {exc}") from exc
        if mech.noise_scale <= 0:
            raise UnsupportedFamilyError(
                f"{v.name()}: zero noise scale leaves no density to probe")
    return children


def log_density_derivatives(model: HierModel, level: int,
                            child_values: Sequence[float],
                            parent_values: Sequence[float],
                            mode: str = "analytic",
                            step: float = 1e-4) -> np.ndarray:
    """First and second partial log-density derivatives, stacked.

    Output layout is (d/dv_1 .. d/dv_n, d2/dv_1^2 .. d2/dv_n^2) for the
    n children of `level`, each conditional evaluated at its own slice
    of `parent_values`. The analytic route uses the gaussian closed
    form; the finite-difference route re-evaluates the log density and
    exists to cross-check it.
    """
    if mode not in ("analytic", "fd"):
        raise ValueError(f"unknown mode {mode!r}")
    if not 1 <= level <= model.num_levels - 1:
        raise ValueError(f"level {level} has no latent children")
    children = _smooth_children(model, level)
    child_values = np.asarray(child_values, dtype=float).reshape(-1)
    parent_values = np.asarray(parent_values, dtype=float).reshape(-1)
    if child_values.size != len(children):
        raise ValueError("child value count does not match the level width")
    if parent_values.size != model.width(level):
        raise ValueError("parent value count does not match the level width")
    level_order = {v: j for j, v in enumerate(model.level_vars(level))}

    firsts = np.empty(len(children))
    seconds = np.empty(len(children))
    for j, v in enumerate(children):
        mech = model.mechanisms[v]
        idx = [level_order[p] for p in parents(model, v)]
        pa = parent_values[idx].reshape(1, -1)
        mu, sig = mech.conditional_gaussian(pa)
        mu, sig = float(mu[0]), float(sig[0])
        c = float(child_values[j])
        if mode == "analytic":
            firsts[j] = -(c - mu) / sig ** 2
            seconds[j] = -1.0 / sig ** 2
        else:
            h = step * max(sig, 1e-8)
            lp = lambda t: -0.5 * ((t - mu) / sig) ** 2 - np.log(sig)
            firsts[j] = (lp(c + h) - lp(c - h)) / (2 * h)
            seconds[j] = (lp(c + h) - 2 * lp(c) + lp(c - h)) / h ** 2
    return np.concatenate([firsts, seconds])


def structural_rank_bound(model: HierModel, level: int) -> int:
    """Upper bound on the achievable span, read off the mechanism forms.

    Coordinates that no parent value can move contribute nothing: a
    constant-variance conditional freezes its second-derivative slot,
    and a conditional that ignores its parents freezes both.
    """
    bound = 0
    for v in model.level_vars(level + 1):
        mech = model.mechanisms[v]
        k = len(parents(model, v))
        p = mech.params
        if mech.family == "linear-gaussian":
            mu_moves = any(c != 0 for c in p[1:])
            sigma_moves = False
        elif mech.family == "affine-tanh":
            mu_moves = p[0] != 0 and any(c != 0 for c in p[2:])
            sigma_moves = False
        elif mech.family == "location-scale-gaussian":
            mu_moves = any(c != 0 for c in p[1:1 + k])
            sigma_moves = any(c != 0 for c in p[2 + k:])
        else:
            raise UnsupportedFamilyError(
                f"{v.name()}: family {mech.family!r} has no smooth density")
        bound += int(mu_moves or sigma_moves) + int(sigma_moves)
    return bound


@dataclass
class VariabilityReport:
    level: int
    target_rank: int
    structural_bound: int
    rank: int
    verdict: str
    mode: str
    tolerance: float
    probes: int
    anchors: np.ndarray
    difference_matrix: np.ndarray
    singular_values: np.ndarray

    @property
    def passed(self) -> bool:
        return self.verdict == PASS


def check_sufficient_variability(model: HierModel, level: int,
                                 probes: int = 25, attempts: int = 8,
                                 seed: int = 0, mode: str = "analytic",
                                 tol: Optional[float] = None,
                                 ) -> VariabilityReport:
    """Search for anchor sets whose derivative differences span 2n dims.

    The rank reported is the worst over probe points of the best over
    anchor attempts — a certificate must hold at every point, but each
    point is allowed its own anchors. Failure to find a spanning set is
    "not-verified" unless the structural bound already rules one out.
    """
    report = validate(model)
    if not report.ok:
        raise ValueError(f"model does not validate: {report.violations[0]}")
    if not 1 <= level <= model.num_levels - 1:
        raise ValueError(f"level {level} has no latent children")
    _smooth_children(model, level)
    n = model.width(level + 1)
    target = 2 * n
    bound = structural_rank_bound(model, level)
    tol_eff = tol if tol is not None else (
        ANALYTIC_RANK_TOL if mode == "analytic" else FD_RANK_TOL)

    rows_needed = probes + attempts * (target + 1)
    batch = sample(model, _all_present(model), rows_needed, seed)
    child_rows = batch.level_matrix(level + 1)
    parent_rows = batch.level_matrix(level)

    worst_rank = target
    worst_detail = None
    for p in range(probes):
        point = child_rows[p]
        best_rank, best_detail = -1, None
        for a in range(attempts):
            lo = probes + a * (target + 1)
            anchors = parent_rows[lo:lo + target + 1]
            base = log_density_derivatives(model, level, point, anchors[0],
                                           mode=mode)
            diffs = np.stack([
                log_density_derivatives(model, level, point, anchors[k],
                                        mode=mode) - base
                for k in range(1, target + 1)])
            svals = np.linalg.svd(diffs, compute_uv=False)
            rank = (int((svals > tol_eff * svals[0]).sum())
                    if svals[0] > 0 else 0)
            if rank > best_rank:
                best_rank = rank
                best_detail = (anchors, diffs, svals)
            if best_rank == target:
                break
        if best_rank < worst_rank or worst_detail is None:
            worst_rank = best_rank
            worst_detail = best_detail
    anchors, diffs, svals = worst_detail
    if worst_rank == target:
        verdict = PASS
    elif bound < target:
        verdict = VIOLATED
    else:
        verdict = NOT_VERIFIED
    return VariabilityReport(level=level, target_rank=target,
                             structural_bound=bound, rank=worst_rank,
                             verdict=verdict, mode=mode, tolerance=tol_eff,
                             probes=probes, anchors=anchors,
                             difference_matrix=diffs, singular_values=svals)


@dataclass
class CIReport:
    level: int
    mode: str
    alpha: float
    records: List[Dict]

    @property
    def all_independent(self) -> bool:
        return all(r["independent"] for r in self.records)


def check_conditional_independence(source: Union[HierModel, SampleBatch],
                                   level: int, alpha: float = 0.01,
                                   test: str = "partial-correlation",
                                   bins: int = DEFAULT_BINS,
                                   permutations: int = DEFAULT_PERMUTATIONS,
                                   seed: int = 0) -> CIReport:
    """Same-level independence of level+1 given level.

    On a model the answer is structural: levels only read the level
    directly above, so siblings share no other path once their parents
    are fixed. On a batch the declared test runs per pair, conditioning
    on every level-`level` column.
    """
    if isinstance(source, HierModel):
        names = [v.name() for v in source.level_vars(level + 1)]
        records = [{"pair": (a, b), "statistic": None, "p_value": None,
                    "independent": True, "basis": "structural"}
                   for i, a in enumerate(names) for b in names[i + 1:]]
        return CIReport(level=level, mode="structural", alpha=alpha,
                        records=records)

    batch = source
    if batch.n < MIN_CI_SAMPLES:
        raise ValueError(
            f"empirical independence checks need at least {MIN_CI_SAMPLES} "
            f"rows, got {batch.n}")
    names = batch.level_names(level + 1)
    cond = batch.level_matrix(level)
    records = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            x, y = batch.columns[a], batch.columns[b]
            if test == "partial-correlation":
                stat, p = partial_correlation_test(x, y, cond)
            elif test == "binned-mi":
                stat, p = binned_mi_test(x, y, cond, bins=bins,
                                         permutations=permutations, seed=seed)
            else:
                raise ValueError(f"unknown test {test!r}")
            records.append({"pair": (a, b), "statistic": float(stat),
                            "p_value": float(p), "independent": p >= alpha,
                            "basis": test})
    return CIReport(level=level, mode="empirical", alpha=alpha, records=records)


@dataclass
class InvertibilityReport:
    level: int
    input_dim: int
    output_dim: int
    dimension_ok: bool
    min_singular: float
    singular_values: np.ndarray
    tolerance: float
    points: int
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.dimension_ok and self.min_singular > self.tolerance


def check_invertibility(model: HierModel, level: Optional[int] = None,
                        points: int = 20, seed: int = 0, tol: float = 1e-6,
                        step: float = 1e-6) -> InvertibilityReport:
    """Injectivity of (level values, downstream noise) -> observation.

    The dimension count runs first: a map into fewer dimensions than it
    consumes cannot be injective, and that verdict needs no numerics.
    Otherwise the smallest singular value of a central-difference
    Jacobian is taken at sampled points; any near-zero value means some
    input direction is locally lost.
    """
    report = validate(model)
    if not report.ok:
        raise ValueError(f"model does not validate: {report.violations[0]}")
    if level is None:
        level = model.num_levels
    if not 1 <= level <= model.num_levels:
        raise ValueError(f"level {level} is not a latent level")
    width = model.width(level)
    extra = noise_dims(model, level)
    m = width + extra
    if model.d_x < m:
        return InvertibilityReport(
            level=level, input_dim=m, output_dim=model.d_x, dimension_ok=False,
            min_singular=0.0, singular_values=np.zeros(0), tolerance=tol,
            points=0,
            reason=(f"dimension deficit: the map consumes {m} coordinates "
                    f"({width} level values + {extra} noise) but the "
                    f"observation has only {model.d_x}"))

    noise_names = []
    for lvl in range(level + 1, model.num_levels + 1):
        for v in model.level_vars(lvl):
            mech = model.mechanisms[v]
            if mech.family != "piecewise-table" and mech.noise_scale > 0:
                noise_names.append(f"z{lvl}.{v.index}")
    x_mech = model.mechanisms[model.x_id]
    x_extra = (model.d_x - len(parents(model, model.x_id))
               if x_mech.noise_scale > 0 else 0)
    noise_names.extend(f"x.{j}" for j in range(1, x_extra + 1))

    def apply(vec: np.ndarray) -> np.ndarray:
        z = vec[:width].reshape(1, width)
        noises = {name: np.array([vec[width + q]])
                  for q, name in enumerate(noise_names)}
        return forward_from_level(model, level, z, noises)[0]

    batch = sample(model, _all_present(model), points, seed)
    z_rows = batch.level_matrix(level)
    min_sing = np.inf
    worst_svals = None
    for p in range(points):
        vec = np.concatenate([z_rows[p], rng.gaussians(seed, 253, p + 1, len(noise_names))]) \
            if noise_names else z_rows[p].astype(float)
        jac = np.empty((model.d_x, m))
        for q in range(m):
            h = step * max(1.0, abs(vec[q]))
            hi, lo = vec.copy(), vec.copy()
            hi[q] += h
            lo[q] -= h
            jac[:, q] = (apply(hi) - apply(lo)) / (2 * h)
        svals = np.linalg.svd(jac, compute_uv=False)
        if svals[m - 1] < min_sing:
            min_sing = float(svals[m - 1])
            worst_svals = svals[:m]
    return InvertibilityReport(level=level, input_dim=m, output_dim=model.d_x,
                               dimension_ok=True, min_singular=min_sing,
                               singular_values=worst_svals, tolerance=tol,
                               points=points,
                               reason="" if min_sing > tol else
                               "rank-deficient Jacobian at a sampled point")


@dataclass
class MatchResult:
    permutation: Tuple[int, ...]
    scores: Tuple[float, ...]
    monotone_r2: Tuple[float, ...]
    invertible: Tuple[bool, ...]
    score_matrix: np.ndarray
    passed: bool


def _columns(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2:
        raise ValueError("component data must be a 2-D array (rows, components)")
    return arr


def match_components(reference, estimate, score_threshold: float = 0.95,
                     monotone_threshold: float = 0.95) -> MatchResult:
    """Align estimated components with references.

    Estimate column i is matched to reference column permutation[i] by
    maximizing total absolute rank correlation (optimal assignment).
    Each matched pair is then fit by the better of an increasing or
    decreasing isotonic regression; an R^2 at or above the monotone
    threshold certifies the pair as related by an invertible reindexing
    of values.
    """
    from scipy.optimize import linear_sum_assignment
    from scipy.stats import rankdata
    from sklearn.isotonic import IsotonicRegression

    ref, est = _columns(reference), _columns(estimate)
    if ref.shape != est.shape:
        raise ValueError("reference and estimate shapes differ")
    n, k = ref.shape
    if n < 4:
        raise ValueError("need at least 4 rows to rank-correlate")
    for label, arr in (("reference", ref), ("estimate", est)):
        for j in range(k):
            if np.ptp(arr[:, j]) == 0:
                raise ConstantColumnError(
                    f"{label} component {j + 1} is constant; "
                    "rank correlation undefined")

    ref_ranks = np.column_stack([rankdata(ref[:, j]) for j in range(k)])
    est_ranks = np.column_stack([rankdata(est[:, j]) for j in range(k)])
    corr = np.corrcoef(est_ranks.T, ref_ranks.T)[:k, k:]
    score_matrix = np.abs(corr)
    rows, cols = linear_sum_assignment(-score_matrix)
    perm = tuple(int(cols[np.where(rows == i)[0][0]]) for i in range(k))
    scores = tuple(float(score_matrix[i, perm[i]]) for i in range(k))

    r2s = []
    for i in range(k):
        x, y = ref[:, perm[i]], est[:, i]
        ss_tot = float(((y - y.mean()) ** 2).sum())
        best = -np.inf
        for increasing in (True, False):
            iso = IsotonicRegression(increasing=increasing,
                                     out_of_bounds="clip")
            pred = iso.fit_transform(x, y)
            ss_res = float(((y - pred) ** 2).sum())
            best = max(best, 1.0 - ss_res / ss_tot)
        r2s.append(best)
    invertible = tuple(r2 >= monotone_threshold for r2 in r2s)
    passed = all(s >= score_threshold for s in scores) and all(invertible)
    return MatchResult(permutation=perm, scores=scores,
                       monotone_r2=tuple(float(r) for r in r2s),
                       invertible=invertible, score_matrix=score_matrix,
                       passed=passed)
