"""Recovering the latent wiring between adjacent levels from batches.

Levels only talk to their neighbours, so candidate edges are exactly
(level-l variable, level-(l+1) variable) pairs and orientation is fixed
by depth. For each pair the search looks for a separating subset of the
remaining level-l variables, smallest subsets first; an edge survives
only if nothing separates it. Every test performed lands in the log.

Scoring a recovered graph against a reference has to respect that
latents are only defined up to a per-level permutation: the score is
computed under the per-level relabelling that maximizes the number of
matched edges (exact dynamic program over levels when the widths allow,
seeded coordinate ascent otherwise).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import rng
from .independence import (
    DEFAULT_BINS,
    DEFAULT_PERMUTATIONS,
    binned_mi_test,
    fisher_p_value,
    partial_correlation_from_cov,
)
from .model import HierModel, parse_var_name
from .sampling import SampleBatch

__all__ = ["RecoveredGraph", "recover_structure", "ScoreReport", "score_graph"]

MIN_RECOVERY_SAMPLES = 500
_EXACT_SEARCH_BUDGET = 2 * 10 ** 7


@dataclass
class RecoveredGraph:
    widths: Tuple[int, ...]
    edges: FrozenSet[Tuple[str, str]]
    test_log: List[Dict]
    alpha: float
    test: str
    n_samples: int

    def edge_lists(self) -> List[List[str]]:
        """Edges in the model-file syntax, deterministically ordered."""
        def key(e):
            a = parse_var_name(e[0], len(self.widths) - 2)
            b = parse_var_name(e[1], len(self.widths) - 2)
            return (a.level, a.index, b.level, b.index)
        return [list(e) for e in sorted(self.edges, key=key)]


def _pool(batches: Sequence[SampleBatch]):
    if not batches:
        raise ValueError("need at least one batch")
    widths = batches[0].widths
    for b in batches[1:]:
        if b.widths != widths:
            raise ValueError("batches come from models of different widths")
    names = set(batches[0].columns)
    cols = {name: np.concatenate([b.columns[name] for b in batches])
            for name in names}
    n = sum(b.n for b in batches)
    return widths, cols, n


def recover_structure(batches: Sequence[SampleBatch], alpha: float = 0.01,
                      test: str = "partial-correlation",
                      max_cond: Optional[int] = None,
                      bins: int = DEFAULT_BINS,
                      permutations: int = DEFAULT_PERMUTATIONS,
                      seed: int = 0) -> RecoveredGraph:
    """Estimate latent-to-latent edges from sampled batches."""
    widths, cols, n = _pool(batches)
    if n < MIN_RECOVERY_SAMPLES:
        raise ValueError(
            f"insufficient samples: recovery needs at least "
            f"{MIN_RECOVERY_SAMPLES} rows, got {n}")
    if test not in ("partial-correlation", "binned-mi"):
        raise ValueError(f"unknown test {test!r}")
    num_levels = len(widths) - 2

    edges = set()
    log: List[Dict] = []
    for level in range(1, num_levels):
        upper = [f"z{level}.{i}" for i in range(1, widths[level] + 1)]
        lower = [f"z{level + 1}.{i}" for i in range(1, widths[level + 1] + 1)]
        cap = min(len(upper) - 1, 3) if max_cond is None else max_cond
        # Family-wise control: alpha is the budget for the whole
        # level-pair decision, spread over every test it can run.
        # Dependence must beat the corrected threshold to survive, so a
        # lucky small p on one valid separator no longer plants a false
        # edge; genuinely linked pairs reject at p-values far below any
        # reasonable correction.
        subsets = sum(math.comb(len(upper) - 1, s) for s in range(cap + 1))
        threshold = alpha / max(1, len(upper) * len(lower) * subsets)
        if test == "binned-mi":
            # A permutation p-value can never drop below 1/(1+perms), so
            # the corrected threshold must stay above that resolution or
            # dependence would become undetectable.
            threshold = max(threshold, 2.0 / (1.0 + permutations))
        if test == "partial-correlation":
            stacked = np.column_stack([cols[nm] for nm in upper + lower])
            cov = np.cov(stacked, rowvar=False)
            pos = {nm: j for j, nm in enumerate(upper + lower)}
        for u in upper:
            for v in lower:
                separated = False
                others = [w for w in upper if w != u]
                for size in range(cap + 1):
                    for cond in itertools.combinations(others, size):
                        if test == "partial-correlation":
                            stat, p = partial_correlation_from_cov(
                                cov, pos[u], pos[v], [pos[c] for c in cond], n)
                        else:
                            stat, p = binned_mi_test(
                                cols[u], cols[v],
                                np.column_stack([cols[c] for c in cond])
                                if cond else None,
                                bins=bins, permutations=permutations,
                                seed=seed)
                        log.append({"pair": (u, v), "conditioning": cond,
                                    "statistic": float(stat),
                                    "p_value": float(p),
                                    "threshold": threshold,
                                    "independent": p >= threshold})
                        if p >= threshold:
                            separated = True
                            break
                    if separated:
                        break
                if not separated:
                    edges.add((u, v))
    return RecoveredGraph(widths=widths, edges=frozenset(edges), test_log=log,
                          alpha=alpha, test=test, n_samples=n)


# ---------------------------------------------------------------------------
# Scoring under per-level permutations.
# ---------------------------------------------------------------------------

@dataclass
class ScoreReport:
    precision: float
    recall: float
    f1: float
    exact_match: bool
    matched: int
    recovered_count: int
    truth_count: int
    permutations: Tuple[Tuple[int, ...], ...]


def _latent_edges(graph: Union[HierModel, RecoveredGraph, Iterable],
                  num_levels: int) -> List[Tuple[int, int, int]]:
    """Edges as (parent level, parent index, child index), latents only."""
    out = []
    if isinstance(graph, HierModel):
        pairs = [(a.name(), b.name()) for a, b in graph.edges]
    elif isinstance(graph, RecoveredGraph):
        pairs = list(graph.edges)
    else:
        pairs = [(a, b) for a, b in graph]
    for a, b in pairs:
        va = parse_var_name(a, num_levels)
        vb = parse_var_name(b, num_levels)
        if va.level < 1 or vb.level > num_levels:
            continue  # indicator and observation edges are out of scope
        if vb.level != va.level + 1:
            raise ValueError(f"edge {a} -> {b} does not cross adjacent levels")
        out.append((va.level, va.index - 1, vb.index - 1))
    return out


def _widths_of(graph, fallback=None) -> Tuple[int, ...]:
    if isinstance(graph, (HierModel, RecoveredGraph)):
        return tuple(graph.widths)
    if fallback is None:
        raise ValueError("cannot infer widths from a bare edge list")
    return tuple(fallback)


def score_graph(recovered: Union[RecoveredGraph, HierModel],
                truth: Union[RecoveredGraph, HierModel],
                restarts: int = 20, seed: int = 0) -> ScoreReport:
    """Best-permutation agreement between a recovered graph and a reference."""
    widths = _widths_of(recovered)
    if _widths_of(truth) != widths:
        raise ValueError("width mismatch: graphs are not comparable")
    num_levels = len(widths) - 2
    rec = _latent_edges(recovered, num_levels)
    tru = _latent_edges(truth, num_levels)
    truth_sets: Dict[int, set] = {}
    for lvl, i, j in tru:
        truth_sets.setdefault(lvl, set()).add((i, j))
    rec_by_level: Dict[int, List[Tuple[int, int]]] = {}
    for lvl, i, j in rec:
        rec_by_level.setdefault(lvl, []).append((i, j))

    level_widths = [widths[l] for l in range(1, num_levels + 1)]
    budget = sum(math.factorial(a) * math.factorial(b)
                 for a, b in zip(level_widths, level_widths[1:]))
    if budget <= _EXACT_SEARCH_BUDGET:
        matched, perms = _score_exact(level_widths, rec_by_level, truth_sets)
    else:
        matched, perms = _score_ascent(level_widths, rec_by_level, truth_sets,
                                       restarts, seed)

    r_count, t_count = len(rec), len(tru)
    precision = matched / r_count if r_count else 1.0
    recall = matched / t_count if t_count else 1.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return ScoreReport(precision=precision, recall=recall, f1=f1,
                       exact_match=(matched == r_count == t_count),
                       matched=matched, recovered_count=r_count,
                       truth_count=t_count,
                       permutations=tuple(tuple(p) for p in perms))


def _count(edges: List[Tuple[int, int]], truth: set, p, q) -> int:
    return sum((p[i], q[j]) in truth for i, j in edges)


def _score_exact(level_widths, rec_by_level, truth_sets):
    perms_per_level = [list(itertools.permutations(range(w)))
                       for w in level_widths]
    L = len(level_widths)
    dp_tables = [{p: (0, None) for p in perms_per_level[0]}]
    for l in range(1, L):
        edges = rec_by_level.get(l, [])
        truth = truth_sets.get(l, set())
        prev = dp_tables[-1]
        new_dp = {}
        for q in perms_per_level[l]:
            best = (-1, None)
            for p, (score, _) in prev.items():
                total = score + _count(edges, truth, p, q)
                if total > best[0]:
                    best = (total, p)
            new_dp[q] = best
        dp_tables.append(new_dp)
    last_perm, (score, _) = max(dp_tables[-1].items(), key=lambda kv: kv[1][0])
    chain = [last_perm]
    for l in range(L - 1, 0, -1):
        chain.append(dp_tables[l][chain[-1]][1])
    chain.reverse()
    return score, chain


def _score_ascent(level_widths, rec_by_level, truth_sets, restarts, seed):
    from scipy.optimize import linear_sum_assignment

    L = len(level_widths)

    def total(perms):
        return sum(_count(rec_by_level.get(l, []), truth_sets.get(l, set()),
                          perms[l - 1], perms[l]) for l in range(1, L))

    best_score, best_perms = -1, None
    for r in range(restarts):
        if r == 0:
            perms = [tuple(range(w)) for w in level_widths]
        else:
            perms = [tuple(rng.permutation(seed, r * 64 + l, w))
                     for l, w in enumerate(level_widths)]
        improved = True
        while improved:
            improved = False
            for l in range(L):
                w = level_widths[l]
                gain = np.zeros((w, w))
                for i in range(w):
                    for t in range(w):
                        # gain of assigning recovered i -> truth t, scored
                        # against both neighbouring levels
                        g = 0
                        if l >= 1:
                            for (a, b) in rec_by_level.get(l, []):
                                if b == i and (perms[l - 1][a], t) in \
                                        truth_sets.get(l, set()):
                                    g += 1
                        if l + 1 < L:
                            for (a, b) in rec_by_level.get(l + 1, []):
                                if a == i and (t, perms[l + 1][b]) in \
                                        truth_sets.get(l + 1, set()):
                                    g += 1
                        gain[i, t] = g
                rows, colsa = linear_sum_assignment(-gain)
                new_perm = tuple(int(colsa[np.where(rows == i)[0][0]])
                                 for i in range(w))
                if new_perm != perms[l]:
                    old = total(perms)
                    trial = list(perms)
                    trial[l] = new_perm
                    if total(trial) > old:
                        perms = trial
                        improved = True
        score = total(perms)
        if score > best_score:
            best_score, best_perms = score, perms
    return best_score, best_perms
