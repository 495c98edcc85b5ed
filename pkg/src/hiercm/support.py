"""Support tables: which parent-value regions a combination can reach.

The composability certificate needs, for each latent variable z and each
combination d, the support of z's parents given d, and it needs supports
for different d to be comparable as sets. Two routes build those sets:

* exact enumeration, for models whose roots are finite (degenerate /
  finite-choice) and whose mechanisms are lookup tables — supports are
  finite value-tuple sets, computed level by level;
* empirical estimation, for anything samplable — draws are quantized on
  a shared per-variable grid and supports become cell-index sets.

Both routes store grid cells, so exact and empirical entries compare
through the same coordinates. Empirical entries record the sample size
and seed they came from; because the sampler is prefix-stable, refining
an entry with more rows can only grow it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .model import (
    Degenerate,
    FiniteChoice,
    HierModel,
    VariableId,
    parents,
    parse_var_name,
    var_name,
)
from .sampling import sample

__all__ = [
    "QuantizationGrid",
    "SupportEntry",
    "SupportTable",
    "MissingSupportError",
    "build_grid",
    "exact_grid",
    "enumerate_exact_support",
    "empirical_support_table",
    "exact_support_table",
]

DEFAULT_CELLS = 16


class MissingSupportError(KeyError):
    """Raised when a support table has no entry for a query."""


@dataclass(frozen=True)
class QuantizationGrid:
    """Per-variable uniform binning shared across combinations.

    Comparing supports of different combinations is only meaningful when
    both are quantized on the same grid, so grids are frozen and tables
    carry exactly one.
    """

    bounds: Dict[str, Tuple[float, float]]
    cells: int = DEFAULT_CELLS

    def cell_of(self, name: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[name]
        values = np.asarray(values, dtype=float)
        if hi <= lo:
            return np.zeros(values.shape, dtype=np.int64)
        idx = np.floor((values - lo) / (hi - lo) * self.cells).astype(np.int64)
        return np.clip(idx, 0, self.cells - 1)

    def cells_of(self, names: Sequence[str],
                 matrix: np.ndarray) -> FrozenSet[Tuple[int, ...]]:
        coded = np.column_stack(
            [self.cell_of(name, matrix[:, j]) for j, name in enumerate(names)])
        return frozenset(map(tuple, coded.tolist()))


def build_grid(model: HierModel, combos: Iterable[Sequence[int]], n: int,
               seed: int, cells: int = DEFAULT_CELLS) -> QuantizationGrid:
    """Pool samples over the given combinations and bound each latent."""
    combos = [tuple(c) for c in combos]
    if not combos:
        raise ValueError("need at least one combination to build a grid")
    pooled: Dict[str, List[np.ndarray]] = {}
    for combo in combos:
        batch = sample(model, combo, n, seed)
        for level in range(1, model.num_levels + 1):
            for name in batch.level_names(level):
                pooled.setdefault(name, []).append(batch.columns[name])
    bounds = {}
    for name, chunks in pooled.items():
        col = np.concatenate(chunks)
        lo, hi = float(col.min()), float(col.max())
        pad = 1e-9 * max(1.0, abs(lo), abs(hi))
        bounds[name] = (lo - pad, hi + pad)
    return QuantizationGrid(bounds=bounds, cells=cells)


@dataclass(frozen=True)
class SupportEntry:
    names: Tuple[str, ...]
    combination: Tuple[int, ...]
    cells: FrozenSet[Tuple[int, ...]]
    provenance: str  # "exact" or "empirical"
    sample_size: int = 0
    seed: int = 0


@dataclass
class SupportTable:
    """Supports of variable tuples, keyed by (names, combination)."""

    grid: QuantizationGrid
    entries: Dict[Tuple[Tuple[str, ...], Tuple[int, ...]], SupportEntry] = field(
        default_factory=dict)

    def key(self, names: Sequence[str], combo: Sequence[int]):
        return (tuple(names), tuple(int(v) for v in combo))

    def get(self, names: Sequence[str], combo: Sequence[int]) -> SupportEntry:
        k = self.key(names, combo)
        if k not in self.entries:
            raise MissingSupportError(f"no support entry for {k[0]} given d={k[1]}")
        return self.entries[k]

    def put(self, entry: SupportEntry) -> None:
        key = (entry.names, entry.combination)
        existing = self.entries.get(key)
        # An exact entry is authoritative; never downgrade it.
        if existing is not None and existing.provenance == "exact" \
                and entry.provenance != "exact":
            return
        self.entries[key] = entry

    def combinations(self) -> List[Tuple[int, ...]]:
        return sorted({combo for _, combo in self.entries})


def _parent_names(model: HierModel, v: VariableId) -> Tuple[str, ...]:
    return tuple(var_name(p, model.num_levels) for p in parents(model, v))


def latent_parent_sets(model: HierModel) -> Dict[VariableId, Tuple[str, ...]]:
    """Parent name tuples for every latent at levels 2..L.

    Level-1 latents are excluded: their parent is the paired indicator
    coordinate, whose support given d is just {d_i} — the certificate
    handles that case by direct coordinate comparison, not via a table.
    """
    out = {}
    for level in range(2, model.num_levels + 1):
        for v in model.level_vars(level):
            out[v] = _parent_names(model, v)
    return out


# ---------------------------------------------------------------------------
# Empirical route.
# ---------------------------------------------------------------------------

def empirical_entry(model: HierModel, grid: QuantizationGrid,
                    names: Sequence[str], combo: Sequence[int], n: int,
                    seed: int) -> SupportEntry:
    batch = sample(model, combo, n, seed)
    matrix = batch.matrix(list(names))
    cells = grid.cells_of(list(names), matrix)
    return SupportEntry(names=tuple(names), combination=tuple(int(v) for v in combo),
                        cells=cells, provenance="empirical", sample_size=n,
                        seed=seed)


def empirical_support_table(model: HierModel, combos: Iterable[Sequence[int]],
                            n: int = 4000, seed: int = 0,
                            cells: int = DEFAULT_CELLS,
                            grid: Optional[QuantizationGrid] = None,
                            parent_sets: Optional[Iterable[Sequence[str]]] = None,
                            ) -> SupportTable:
    combos = [tuple(int(v) for v in c) for c in combos]
    if grid is None:
        grid = build_grid(model, combos, n, seed, cells)
    table = SupportTable(grid=grid)
    sets = ([tuple(s) for s in parent_sets] if parent_sets is not None
            else sorted(set(latent_parent_sets(model).values())))
    for combo in combos:
        for names in sets:
            table.put(empirical_entry(model, grid, names, combo, n, seed))
    return table


def refine(table: SupportTable, model: HierModel, names: Sequence[str],
           combos: Iterable[Sequence[int]], factor: int = 4) -> None:
    """Re-estimate empirical entries with `factor` times more rows.

    Prefix-stable streams guarantee refined cell sets are supersets of
    the originals, so refinement can only resolve borderline misses.
    """
    for combo in combos:
        entry = table.get(names, combo)
        if entry.provenance != "empirical":
            continue
        table.put(empirical_entry(model, table.grid, names, combo,
                                  entry.sample_size * factor, entry.seed))


# ---------------------------------------------------------------------------
# Exact route for finite models.
# ---------------------------------------------------------------------------

def _root_value_set(model: HierModel, i: int, c: int) -> Tuple[float, ...]:
    variant = model.roots[i].by_value[c]
    values = variant.finite_values()
    if values is None:
        raise ValueError(
            f"root conditional for d.{i}={c} is not finite; exact "
            "enumeration needs degenerate or finite-choice roots")
    return values


def enumerate_joint_values(model: HierModel, d: Sequence[int],
                           up_to_level: int) -> Dict[int, List[Tuple[float, ...]]]:
    """Reachable joint value tuples per level, for finite models."""
    d = tuple(int(v) for v in d)
    joint: Dict[int, List[Tuple[float, ...]]] = {}
    per_root = [_root_value_set(model, i, d[i - 1]) for i in range(1, model.n_d + 1)]
    joint[1] = sorted(set(itertools.product(*per_root)))
    for level in range(2, up_to_level + 1):
        level_vars = model.level_vars(level)
        prev_vars = model.level_vars(level - 1)
        prev_index = {v: j for j, v in enumerate(prev_vars)}
        tuples = set()
        for prev in joint[level - 1]:
            row = []
            for v in level_vars:
                mech = model.mechanisms[v]
                if mech.family != "piecewise-table":
                    raise ValueError(
                        f"mechanism for {v.name()} is {mech.family!r}; exact "
                        "enumeration needs piecewise-table mechanisms")
                key = tuple(prev[prev_index[p]] for p in parents(model, v))
                row.append(mech.lookup(key))
            tuples.add(tuple(row))
        joint[level] = sorted(tuples)
    return joint


def enumerate_exact_support(model: HierModel, d: Sequence[int],
                            names: Sequence[str]) -> FrozenSet[Tuple[float, ...]]:
    """Exact support of the named variables given d, as value tuples."""
    ids = [parse_var_name(name, model.num_levels) for name in names]
    levels = {v.level for v in ids}
    if len(levels) != 1:
        raise ValueError("exact support queries must stay within one level")
    level = levels.pop()
    if not 1 <= level <= model.num_levels:
        raise ValueError("exact support is defined for latent levels only")
    joint = enumerate_joint_values(model, d, level)
    level_vars = model.level_vars(level)
    pos = {v: j for j, v in enumerate(level_vars)}
    idx = [pos[v] for v in ids]
    return frozenset(tuple(t[j] for j in idx) for t in joint[level])


def exact_grid(model: HierModel, combos: Iterable[Sequence[int]],
               cells: int = DEFAULT_CELLS) -> QuantizationGrid:
    """Grid bounding the exact reachable values over the combinations."""
    combos = [tuple(c) for c in combos]
    pooled: Dict[str, List[float]] = {}
    for combo in combos:
        joint = enumerate_joint_values(model, combo, model.num_levels)
        for level in range(1, model.num_levels + 1):
            level_vars = model.level_vars(level)
            for j, v in enumerate(level_vars):
                name = v.name()
                vals = [t[j] for t in joint[level]]
                pooled.setdefault(name, []).extend(vals)
    bounds = {}
    for name, vals in pooled.items():
        lo, hi = min(vals), max(vals)
        pad = 1e-9 * max(1.0, abs(lo), abs(hi))
        bounds[name] = (lo - pad, hi + pad)
    return QuantizationGrid(bounds=bounds, cells=cells)


def exact_support_table(model: HierModel, combos: Iterable[Sequence[int]],
                        cells: int = DEFAULT_CELLS,
                        grid: Optional[QuantizationGrid] = None,
                        parent_sets: Optional[Iterable[Sequence[str]]] = None,
                        ) -> SupportTable:
    combos = [tuple(int(v) for v in c) for c in combos]
    if grid is None:
        grid = exact_grid(model, combos, cells)
    table = SupportTable(grid=grid)
    sets = ([tuple(s) for s in parent_sets] if parent_sets is not None
            else sorted(set(latent_parent_sets(model).values())))
    for combo in combos:
        for names in sets:
            values = enumerate_exact_support(model, combo, names)
            matrix = np.asarray(sorted(values), dtype=float).reshape(len(values),
                                                                     len(names))
            cells_set = grid.cells_of(list(names), matrix)
            table.put(SupportEntry(names=tuple(names), combination=combo,
                                   cells=cells_set, provenance="exact"))
    return table
