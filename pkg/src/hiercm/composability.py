"""Certifying which discrete combinations a trained model composes to.

A combination d is certified when every latent variable can point at
some training combination whose parent-value support covers the support
that d induces on the same parents. Covered inputs pin the learned
mechanisms down on everything d will ever feed them, so any model that
agrees with the data generator on the training combinations must agree
on d as well. The certificate checks exactly that, latent by latent:

* level-1 latents are driven directly by their paired indicator
  coordinate, so coverage means some training combination shares that
  coordinate value — which confines certifiable combinations to the
  cartesian product of per-coordinate training values;
* deeper latents compare quantized (or exact) parent supports through a
  shared `SupportTable`.

The observation mechanism is deliberately not checked: its inputs are
the level-L latents, whose upstream mechanisms the per-latent conditions
already pin down, and the guarantee is stated for the latent process.

Witnesses are deterministic (lexicographically smallest covering
combination); failures carry blockers — the uncovered support cells of
the best available candidate. Empirical supports get one automatic
retry at four times the sample size before a failure is final, which is
sound because refinement only grows support sets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .model import HierModel, VariableId, validate
from .support import (
    MissingSupportError,
    SupportTable,
    empirical_entry,
    empirical_support_table,
    enumerate_exact_support,
    exact_support_table,
    latent_parent_sets,
)

__all__ = [
    "ComposabilityVerdict",
    "ComposabilityReport",
    "SweepRow",
    "SweepReport",
    "cartesian_candidates",
    "check_composability",
    "enumerate_composable_space",
    "sparsity_sweep",
    "default_support_table",
]

Combo = Tuple[int, ...]
RETRY_FACTOR = 4


@dataclass
class ComposabilityVerdict:
    combination: Combo
    composable: bool
    witnesses: Dict[str, Combo]
    blockers: List[Tuple[str, Tuple]]
    retried: bool = False


@dataclass
class ComposabilityReport:
    space: Tuple[Combo, ...]
    candidates: Tuple[Combo, ...]
    verdicts: List[ComposabilityVerdict]

    @property
    def composable(self) -> Tuple[Combo, ...]:
        return tuple(v.combination for v in self.verdicts if v.composable)


@dataclass
class SweepRow:
    edge_count: int
    max_parent_size: int
    composable_count: int
    composable: Tuple[Combo, ...]


@dataclass
class SweepReport:
    rows: List[SweepRow]  # ordered by increasing edge count

    @property
    def monotone(self) -> bool:
        # Rows are ordered by increasing edge count; adding edges can only
        # shrink the certified set, so counts must be non-increasing.
        counts = [r.composable_count for r in self.rows]
        return all(a >= b for a, b in zip(counts, counts[1:]))


def _normalize_space(model: HierModel, space: Iterable[Sequence[int]]
                     ) -> List[Combo]:
    out = []
    for combo in space:
        combo = tuple(int(v) for v in combo)
        if len(combo) != model.n_d:
            raise ValueError(f"combination {combo} has wrong length")
        for i, v in enumerate(combo, start=1):
            if not 0 <= v < model.cardinality(i):
                raise ValueError(f"d.{i} = {v} outside its cardinality")
        out.append(combo)
    if not out:
        raise ValueError("training space must be non-empty")
    return sorted(set(out))


def cartesian_candidates(model: HierModel,
                         space: Iterable[Sequence[int]]) -> List[Combo]:
    """Cartesian product of the per-coordinate values seen in the space."""
    space = _normalize_space(model, space)
    marginals = [sorted({combo[i] for combo in space})
                 for i in range(len(space[0]))]
    return [tuple(c) for c in itertools.product(*marginals)]


def _is_finite(model: HierModel) -> bool:
    for level in range(2, model.num_levels + 1):
        for v in model.level_vars(level):
            if model.mechanisms[v].family != "piecewise-table":
                return False
    for rc in model.roots.values():
        for variant in rc.by_value:
            if variant.finite_values() is None:
                return False
    return True


def default_support_table(model: HierModel, combos: Iterable[Sequence[int]],
                          n: int = 4000, seed: int = 0) -> SupportTable:
    """Exact table when the model is finite, empirical otherwise."""
    combos = [tuple(int(v) for v in c) for c in combos]
    if _is_finite(model):
        return exact_support_table(model, combos)
    return empirical_support_table(model, combos, n=n, seed=seed)


def _ensure_entry(table: SupportTable, model: HierModel,
                  names: Tuple[str, ...], combo: Combo,
                  n: int, seed: int) -> None:
    try:
        table.get(names, combo)
        return
    except MissingSupportError:
        pass
    if _is_finite(model):
        values = enumerate_exact_support(model, combo, names)
        import numpy as np

        from .support import SupportEntry
        matrix = np.asarray(sorted(values), dtype=float).reshape(
            len(values), len(names))
        table.put(SupportEntry(names=names, combination=combo,
                               cells=table.grid.cells_of(list(names), matrix),
                               provenance="exact"))
    else:
        table.put(empirical_entry(model, table.grid, names, combo, n, seed))


def check_composability(model: HierModel, space: Iterable[Sequence[int]],
                        d: Sequence[int], table: Optional[SupportTable] = None,
                        retry: bool = True, n: int = 4000,
                        seed: int = 0) -> ComposabilityVerdict:
    """Certify (or refuse) one combination against a training space."""
    report = validate(model)
    if not report.ok:
        raise ValueError(f"model does not validate: {report.violations[0]}")
    space = _normalize_space(model, space)
    d = _normalize_space(model, [d])[0]
    if table is None:
        table = default_support_table(model, space + [d], n=n, seed=seed)
    parent_sets = latent_parent_sets(model)
    for names in set(parent_sets.values()):
        for combo in space + [d]:
            _ensure_entry(table, model, names, combo, n, seed)

    witnesses: Dict[str, Combo] = {}
    blockers: List[Tuple[str, Tuple]] = []
    retried = False

    # Level 1: coverage is sharing the paired indicator coordinate.
    for v in model.level_vars(1):
        i = v.index
        found = next((c for c in space if c[i - 1] == d[i - 1]), None)
        if found is None:
            blockers.append((v.name(), (d[i - 1],)))
        else:
            witnesses[v.name()] = found

    # Levels 2..L: support containment through the table.
    for v, names in sorted(parent_sets.items()):
        result = _witness_for(table, names, space, d)
        if result.witness is None and retry and result.any_empirical:
            _refine_round(table, model, names, space, d)
            retried = True
            result = _witness_for(table, names, space, d)
        if result.witness is None:
            blockers.extend((v.name(), cell) for cell in result.uncovered)
        else:
            witnesses[v.name()] = result.witness

    return ComposabilityVerdict(combination=d, composable=not blockers,
                                witnesses=witnesses, blockers=blockers,
                                retried=retried)


@dataclass
class _WitnessSearch:
    witness: Optional[Combo]
    uncovered: List[Tuple]
    any_empirical: bool


def _witness_for(table: SupportTable, names: Tuple[str, ...],
                 space: List[Combo], d: Combo) -> _WitnessSearch:
    query = table.get(names, d)
    any_empirical = query.provenance == "empirical"
    best_missing: Optional[List[Tuple]] = None
    for candidate in space:
        entry = table.get(names, candidate)
        any_empirical = any_empirical or entry.provenance == "empirical"
        missing = query.cells - entry.cells
        if not missing:
            return _WitnessSearch(witness=candidate, uncovered=[],
                                  any_empirical=any_empirical)
        if best_missing is None or len(missing) < len(best_missing):
            best_missing = sorted(missing)
    return _WitnessSearch(witness=None, uncovered=best_missing or [],
                          any_empirical=any_empirical)


def _refine_round(table: SupportTable, model: HierModel,
                  names: Tuple[str, ...], space: List[Combo], d: Combo) -> None:
    for combo in space + [d]:
        entry = table.get(names, combo)
        if entry.provenance != "empirical":
            continue
        table.put(empirical_entry(model, table.grid, names, combo,
                                  entry.sample_size * RETRY_FACTOR, entry.seed))


def enumerate_composable_space(model: HierModel, space: Iterable[Sequence[int]],
                               candidates: Optional[Iterable[Sequence[int]]] = None,
                               table: Optional[SupportTable] = None,
                               n: int = 4000, seed: int = 0,
                               ) -> ComposabilityReport:
    """Run the certificate over candidate combinations.

    Defaults to the cartesian product of per-coordinate training values,
    which is the widest set the level-1 condition can ever admit. The
    training combinations themselves always certify (each is its own
    witness), so the result is a superset of the training space.
    """
    space = _normalize_space(model, space)
    if candidates is None:
        cand = cartesian_candidates(model, space)
    else:
        cand = _normalize_space(model, candidates)
    if table is None:
        table = default_support_table(model, space + cand, n=n, seed=seed)
    verdicts = [check_composability(model, space, d, table=table, n=n, seed=seed)
                for d in cand]
    return ComposabilityReport(space=tuple(space), candidates=tuple(cand),
                               verdicts=verdicts)


def sparsity_sweep(models: Sequence[HierModel], space: Iterable[Sequence[int]],
                   tables: Optional[Sequence[SupportTable]] = None,
                   n: int = 4000, seed: int = 0) -> SweepReport:
    """Certified-set size across a nested-edge family of models.

    Models must share widths and form a chain under edge inclusion;
    anything else raises, because counts of unrelated graphs say nothing
    about sparsity.
    """
    if len(models) < 2:
        raise ValueError("a sweep needs at least two models")
    widths = models[0].widths
    for m in models[1:]:
        if m.widths != widths:
            raise ValueError("family members not comparable: widths differ")
    ordered = sorted(models, key=lambda m: len(m.edges))
    for small, large in zip(ordered, ordered[1:]):
        if not set(small.edges) <= set(large.edges):
            raise ValueError("family members not comparable: edges not nested")
    if tables is not None and len(tables) != len(models):
        raise ValueError("need one support table per model")
    table_of = dict(zip(map(id, models), tables)) if tables else {}

    rows = []
    for m in ordered:
        report = enumerate_composable_space(
            m, space, table=table_of.get(id(m)), n=n, seed=seed)
        max_k = max(
            (len(names) for names in latent_parent_sets(m).values()), default=1)
        rows.append(SweepRow(edge_count=len(m.edges), max_parent_size=max_k,
                             composable_count=len(report.composable),
                             composable=report.composable))
    return SweepReport(rows=rows)
