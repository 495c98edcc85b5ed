"""Ready-made models: small fixtures and a layered demo generator.

These cover the shapes the rest of the toolkit is demonstrated and
tested on: a noisy chain, a two-root lookup-table pair for exact
composability runs, conditionals engineered to pass or fail the
variability check, and a 2/2/4/6 layered graph with a 12-dimensional
observation whose random-coefficient variant drives structure-recovery
runs.
"""

from __future__ import annotations

from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from . import rng
from .model import (
    Degenerate,
    FiniteChoice,
    HierModel,
    IntervalDist,
    MechanismSpec,
    RootConditional,
    VariableId,
    parse_var_name,
)

__all__ = [
    "chain_model",
    "layered_demo",
    "random_layered",
    "two_root_separate",
    "two_root_joint",
    "location_scale_chain",
    "constant_variance_chain",
    "decoupled_chain",
    "identity_observation",
    "with_mechanism",
]


def _lg(bias: float, coefs: Tuple[float, ...], scale: float) -> MechanismSpec:
    return MechanismSpec(family="linear-gaussian", params=(bias,) + coefs,
                         noise_family="gaussian", noise_scale=scale)


def _table(mapping: Mapping[Tuple[float, ...], float]) -> MechanismSpec:
    return MechanismSpec(family="piecewise-table", params=(),
                         noise_family=None, noise_scale=0.0,
                         table={k: float(v) for k, v in mapping.items()})


def _interval_root(lo: float = 0.5, hi: float = 1.5) -> RootConditional:
    return RootConditional(by_value=(Degenerate(0.0), IntervalDist(lo, hi)))


def _choice_root(values=(1.0, 2.0), probs=(0.5, 0.5)) -> RootConditional:
    return RootConditional(by_value=(Degenerate(0.0),
                                     FiniteChoice(tuple(values), tuple(probs))))


def chain_model(noise_scale: float = 0.5, x_noise: float = 0.25,
                coef: float = 1.0) -> HierModel:
    """d -> z1 -> z2 -> x with linear-gaussian links."""
    v = lambda name: parse_var_name(name, 2)
    edges = frozenset([(v("d.1"), v("z1.1")), (v("z1.1"), v("z2.1")),
                       (v("z2.1"), v("x"))])
    mechanisms = {
        v("z2.1"): _lg(0.0, (coef,), noise_scale),
        v("x"): MechanismSpec(family="concat-affine", params=(1.0, 0.0),
                              noise_family="gaussian", noise_scale=x_noise),
    }
    return HierModel(widths=(1, 1, 1, 2), edges=edges, mechanisms=mechanisms,
                     roots={1: _interval_root()})


_DEMO_WIDTHS = (2, 2, 4, 6, 12)

# Parent lists per latent of the layered demo, by (level, index).
_DEMO_PARENTS: Dict[Tuple[int, int], Tuple[str, ...]] = {
    (2, 1): ("z1.1",),
    (2, 2): ("z1.1", "z1.2"),
    (2, 3): ("z1.1", "z1.2"),
    (2, 4): ("z1.2",),
    (3, 1): ("z2.1", "z2.2"),
    (3, 2): ("z2.1", "z2.2"),
    (3, 3): ("z2.2",),
    (3, 4): ("z2.3",),
    (3, 5): ("z2.2", "z2.4"),
    (3, 6): ("z2.3", "z2.4"),
}

_DEMO_COEFS: Dict[Tuple[int, int], Tuple[float, Tuple[float, ...], float]] = {
    (2, 1): (0.1, (1.2,), 0.5),
    (2, 2): (-0.2, (0.9, -1.1), 0.6),
    (2, 3): (0.0, (-0.8, 0.7), 0.5),
    (2, 4): (0.3, (1.0,), 0.55),
    (3, 1): (0.0, (1.1, 0.8), 0.5),
    (3, 2): (0.1, (-0.9, 1.0), 0.5),
    (3, 3): (-0.1, (1.3,), 0.45),
    (3, 4): (0.2, (1.0,), 0.5),
    (3, 5): (0.0, (0.7, -1.2), 0.55),
    (3, 6): (-0.3, (-1.0, 0.9), 0.5),
}


def _layered(coefs: Mapping[Tuple[int, int], Tuple[float, Tuple[float, ...], float]],
             x_noise: float = 0.25) -> HierModel:
    L = len(_DEMO_WIDTHS) - 2
    v = lambda name: parse_var_name(name, L)
    edges = set()
    mechanisms: Dict[VariableId, MechanismSpec] = {}
    for i in (1, 2):
        edges.add((v(f"d.{i}"), v(f"z1.{i}")))
    for (level, index), names in _DEMO_PARENTS.items():
        child = VariableId(level, index)
        for name in names:
            edges.add((v(name), child))
        bias, cs, scale = coefs[(level, index)]
        mechanisms[child] = _lg(bias, cs, scale)
    x = v("x")
    for i in range(1, 7):
        edges.add((VariableId(3, i), x))
    mechanisms[x] = MechanismSpec(family="concat-affine",
                                  params=(1.0, 0.0) * 6,
                                  noise_family="gaussian", noise_scale=x_noise)
    return HierModel(widths=_DEMO_WIDTHS, edges=frozenset(edges),
                     mechanisms=mechanisms,
                     roots={1: _interval_root(), 2: _interval_root()})


def layered_demo() -> HierModel:
    """Fixed-coefficient 2/2/4/6-latent graph with a 12-dim observation."""
    return _layered(_DEMO_COEFS)


def random_layered(seed: int) -> HierModel:
    """Layered demo shape with seeded strong coefficients.

    Magnitudes stay in [0.7, 1.4] with random sign and noise scales in
    [0.4, 0.8], keeping conditional dependences far from the detection
    threshold of the recovery tests.
    """
    coefs = {}
    for slot, key in enumerate(sorted(_DEMO_PARENTS)):
        k = len(_DEMO_PARENTS[key])
        u = rng.uniforms(seed, 254, slot + 1, 2 * k + 2)
        cs = tuple((0.7 + 0.7 * u[2 * j]) * (1.0 if u[2 * j + 1] < 0.5 else -1.0)
                   for j in range(k))
        bias = -0.3 + 0.6 * u[2 * k]
        scale = 0.4 + 0.4 * u[2 * k + 1]
        coefs[key] = (bias, cs, scale)
    return _layered(coefs)


def two_root_separate() -> HierModel:
    """Two finite roots, each driving its own second-level lookup table."""
    v = lambda name: parse_var_name(name, 2)
    edges = frozenset([
        (v("d.1"), v("z1.1")), (v("d.2"), v("z1.2")),
        (v("z1.1"), v("z2.1")), (v("z1.2"), v("z2.2")),
        (v("z2.1"), v("x")), (v("z2.2"), v("x")),
    ])
    t1 = {(0.0,): 0.0, (1.0,): 3.0, (2.0,): 5.0}
    t2 = {(0.0,): 1.0, (1.0,): 4.0, (2.0,): 6.0}
    tx = {(a, b): 10.0 * a + b for a in (0.0, 3.0, 5.0) for b in (1.0, 4.0, 6.0)}
    mechanisms = {v("z2.1"): _table(t1), v("z2.2"): _table(t2),
                  v("x"): _table(tx)}
    return HierModel(widths=(2, 2, 2, 1), edges=edges, mechanisms=mechanisms,
                     roots={1: _choice_root(), 2: _choice_root()})


def two_root_joint() -> HierModel:
    """Like `two_root_separate`, but the second table reads both roots."""
    base = two_root_separate()
    v = lambda name: parse_var_name(name, 2)
    edges = set(base.edges) | {(v("z1.1"), v("z2.2"))}
    t2 = {(a, b): 3.0 * a + b for a in (0.0, 1.0, 2.0) for b in (0.0, 1.0, 2.0)}
    tx = {(a, b): 10.0 * a + b
          for a in (0.0, 3.0, 5.0) for b in sorted(set(t2.values()))}
    mechanisms = dict(base.mechanisms)
    mechanisms[v("z2.2")] = _table(t2)
    mechanisms[v("x")] = _table(tx)
    return HierModel(widths=base.widths, edges=frozenset(edges),
                     mechanisms=mechanisms, roots=base.roots)


def _chain_with_z2(mech: MechanismSpec) -> HierModel:
    base = chain_model()
    v = lambda name: parse_var_name(name, 2)
    mechanisms = dict(base.mechanisms)
    mechanisms[v("z2.1")] = mech
    return HierModel(widths=base.widths, edges=base.edges,
                     mechanisms=mechanisms, roots=base.roots)


def location_scale_chain() -> HierModel:
    """Chain whose middle conditional moves both mean and spread.

    Given parent u the conditional is gaussian with mean u and variance
    exp(u) — the textbook case where second-derivative information is
    genuinely two-dimensional per component.
    """
    mech = MechanismSpec(family="location-scale-gaussian",
                         params=(0.0, 1.0, 0.0, 1.0),
                         noise_family="gaussian", noise_scale=1.0)
    return _chain_with_z2(mech)


def constant_variance_chain() -> HierModel:
    """Chain whose middle conditional only shifts with its parent."""
    return _chain_with_z2(_lg(0.0, (1.0,), 0.5))


def decoupled_chain() -> HierModel:
    """Chain whose middle conditional ignores its parent entirely."""
    return _chain_with_z2(_lg(0.4, (0.0,), 0.5))


def identity_observation() -> HierModel:
    """d -> z1 -> x with x copying z1: the cleanest invertible boundary."""
    v = lambda name: parse_var_name(name, 1)
    edges = frozenset([(v("d.1"), v("z1.1")), (v("z1.1"), v("x"))])
    mechanisms = {v("x"): MechanismSpec(family="concat-affine",
                                        params=(1.0, 0.0),
                                        noise_family="gaussian",
                                        noise_scale=0.0)}
    return HierModel(widths=(1, 1, 1), edges=edges, mechanisms=mechanisms,
                     roots={1: _interval_root()})


def with_mechanism(model: HierModel, name: str, mech: MechanismSpec) -> HierModel:
    """Copy of the model with one mechanism swapped out."""
    v = parse_var_name(name, model.num_levels)
    mechanisms = dict(model.mechanisms)
    if v not in mechanisms:
        raise KeyError(f"{name} has no mechanism")
    mechanisms[v] = mech
    return HierModel(widths=model.widths, edges=model.edges,
                     mechanisms=mechanisms, roots=model.roots)
