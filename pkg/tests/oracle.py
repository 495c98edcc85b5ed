"""Brute-force ground truth for composability, by exhaustive enumeration.

Everything here recomputes p(x|d) from the model definition alone — no
sampling, no support tables, no quantization — so it can sit in judgment
over the certificate code. Only works for finite models: degenerate or
finite-choice roots and piecewise-table mechanisms everywhere.

The ground-truth notion of "composable given training space D_s": the
observation distribution p(x|d) must be unchanged under *any* alternative
latent mechanisms that agree with the truth on every parent-value tuple
observed while training combinations range over D_s.  We cannot quantify
over all alternatives, but shifting each table independently (and all of
them at once) on every unobserved key catches any certificate that lets
unobserved parent cells slip through.
"""

import itertools
from typing import Dict, Iterable, List, Sequence, Tuple

from hiercm.model import HierModel, VariableId, parents, table_key

Key = Tuple[float, ...]
Dist = Dict[float, float]

# Shifts applied to table values on unobserved keys. Deliberately off the
# value lattice used by the corpus so a poisoned lookup can never collide
# with an honest one.
POISON_DELTAS = (0.77, -1.33)


def finite_root_outcomes(model: HierModel, d: Sequence[int]
                         ) -> List[Tuple[float, Tuple[float, ...]]]:
    """All (probability, level-1 value tuple) pairs given d."""
    per_root = []
    for i in range(1, model.n_d + 1):
        variant = model.roots[i].by_value[int(d[i - 1])]
        if variant.kind == "degenerate":
            per_root.append([(1.0, float(variant.value))])
        elif variant.kind == "choice":
            per_root.append([(float(p), float(v))
                             for v, p in zip(variant.values, variant.probs)])
        else:
            raise ValueError("oracle needs degenerate or finite-choice roots")
    outcomes = []
    for combo in itertools.product(*per_root):
        prob = 1.0
        values = []
        for p, v in combo:
            prob *= p
            values.append(v)
        if prob > 0.0:
            outcomes.append((prob, tuple(values)))
    return outcomes


def latent_tables(model: HierModel) -> Dict[VariableId, Dict[Key, float]]:
    """Plain-dict copies of every latent mechanism table (levels 2..L)."""
    out = {}
    for level in range(2, model.num_levels + 1):
        for v in model.level_vars(level):
            mech = model.mechanisms[v]
            if mech.family != "piecewise-table":
                raise ValueError("oracle needs piecewise-table mechanisms")
            out[v] = dict(mech.table)
    return out


def propagate(model: HierModel, z1: Tuple[float, ...],
              tables: Dict[VariableId, Dict[Key, float]]
              ) -> Dict[VariableId, float]:
    """Deterministically push one level-1 tuple through to the observation.

    `tables` supplies the mechanism for latents at levels 2..L; the
    observation mechanism always comes from the model itself (the decoder
    is shared across the swap variants).
    """
    values: Dict[VariableId, float] = {
        VariableId(1, i + 1): z1[i] for i in range(len(z1))
    }
    for level in range(2, model.num_levels + 2):
        for v in model.level_vars(level):
            key = table_key([values[p] for p in parents(model, v)])
            if v.level == model.num_levels + 1:
                values[v] = model.mechanisms[v].lookup(key)
            else:
                values[v] = float(tables[v][key])
    return values


def exact_observation_dist(model: HierModel, d: Sequence[int],
                           tables: Dict[VariableId, Dict[Key, float]] = None
                           ) -> Dist:
    """p(x|d) as a dict value -> probability, by enumerating root draws."""
    if tables is None:
        tables = latent_tables(model)
    dist: Dist = {}
    for prob, z1 in finite_root_outcomes(model, d):
        x = round(propagate(model, z1, tables)[model.x_id], 9)
        dist[x] = dist.get(x, 0.0) + prob
    return dist


def observed_parent_keys(model: HierModel, space: Iterable[Sequence[int]]
                         ) -> Dict[VariableId, set]:
    """Parent-value tuples each latent's mechanism sees during training.

    Union over the training combinations of the keys reachable with
    positive probability. Level-1 latents have no table and the decoder is
    shared, so only levels 2..L appear.
    """
    tables = latent_tables(model)
    seen: Dict[VariableId, set] = {v: set() for v in tables}
    for d in space:
        for _, z1 in finite_root_outcomes(model, d):
            values = propagate(model, z1, tables)
            for v in seen:
                seen[v].add(table_key([values[p] for p in parents(model, v)]))
    return seen


def swap_variants(model: HierModel, space: Iterable[Sequence[int]]
                  ) -> List[Dict[VariableId, Dict[Key, float]]]:
    """Alternative latent table sets agreeing with the truth on the
    training-observed keys and shifted everywhere else.

    One variant per (latent, delta) touching just that latent, plus one
    per delta poisoning every latent at once.
    """
    truth = latent_tables(model)
    observed = observed_parent_keys(model, space)
    variants = []
    for delta in POISON_DELTAS:
        everything = {v: dict(t) for v, t in truth.items()}
        touched_any = False
        for v in sorted(truth):
            unobserved = [k for k in truth[v] if k not in observed[v]]
            if not unobserved:
                continue
            touched_any = True
            single = {w: dict(t) for w, t in truth.items()}
            for k in unobserved:
                single[v][k] = truth[v][k] + delta
                everything[v][k] = truth[v][k] + delta
            variants.append(single)
        if touched_any:
            variants.append(everything)
    return variants


def same_dist(a: Dist, b: Dist, tol: float = 1e-9) -> bool:
    if set(a) != set(b):
        return False
    return all(abs(a[k] - b[k]) <= tol for k in a)


def oracle_composable(model: HierModel, space: Sequence[Sequence[int]],
                      d: Sequence[int]) -> bool:
    """True iff p(x|d) survives every mechanism swap that agrees on the
    training-observed support."""
    truth = exact_observation_dist(model, d)
    assert abs(sum(truth.values()) - 1.0) <= 1e-9
    for tables in swap_variants(model, space):
        try:
            variant = exact_observation_dist(model, d, tables)
        except KeyError:
            # A poisoned value reached a downstream lookup: the parent key
            # it formed was never observed in training, so an alternative
            # model is unconstrained there. p(x|d) is not pinned down.
            return False
        if not same_dist(truth, variant):
            return False
    return True
