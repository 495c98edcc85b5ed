"""Structural invariants of the leveled model: stratified edges, root
pairing, absence degeneracy, serialization round-trips."""

import pytest

import corpus
from hiercm.model import (Degenerate, HierModel, IntervalDist, MechanismSpec,
                          ModelFormatError, RootConditional, VariableId,
                          dumps_model, loads_model, parents, parse_var_name,
                          validate)
from hiercm.presets import (chain_model, layered_demo, location_scale_chain,
                            two_root_joint, two_root_separate)

V = lambda name, L=3: parse_var_name(name, L)


def test_layered_demo_is_well_formed():
    report = validate(layered_demo())
    assert report.violations == []
    assert layered_demo().widths == (2, 2, 4, 6, 12)


def test_cross_level_edge_reported():
    demo = layered_demo()
    bad = HierModel(widths=demo.widths,
                    edges=frozenset(demo.edges) | {(V("z1.1"), V("z3.1"))},
                    mechanisms=demo.mechanisms, roots=demo.roots)
    report = validate(bad)
    assert any("non-adjacent-level edge" in v for v in report.violations)


def test_absence_must_be_degenerate():
    demo = layered_demo()
    roots = dict(demo.roots)
    roots[1] = RootConditional((IntervalDist(0.0, 1.0), IntervalDist(0.0, 1.0)))
    report = validate(HierModel(widths=demo.widths, edges=demo.edges,
                                mechanisms=demo.mechanisms, roots=roots))
    assert any("absence not degenerate" in v for v in report.violations)


def test_nonzero_values_must_share_support():
    demo = layered_demo()
    roots = dict(demo.roots)
    roots[1] = RootConditional((Degenerate(0.0), IntervalDist(0.0, 1.0),
                                IntervalDist(0.0, 2.0)))
    report = validate(HierModel(widths=demo.widths, edges=demo.edges,
                                mechanisms=demo.mechanisms, roots=roots))
    assert any("different supports" in v for v in report.violations)


def test_missing_root_edge_reported():
    demo = layered_demo()
    edges = set(demo.edges)
    edges.remove((V("d.1"), V("z1.1")))
    report = validate(HierModel(widths=demo.widths, edges=frozenset(edges),
                                mechanisms=demo.mechanisms, roots=demo.roots))
    assert any("missing root edge d.1 -> z1.1" in v for v in report.violations)


def test_parents_ordering():
    demo = layered_demo()
    assert parents(demo, V("z2.2")) == [V("z1.1"), V("z1.2")]
    assert parents(demo, V("d.1")) == []
    assert parents(demo, V("z3.4")) == [V("z2.3")]


def test_parents_unknown_variable():
    with pytest.raises(KeyError):
        parents(layered_demo(), VariableId(9, 9))


def test_parse_errors():
    with pytest.raises(ModelFormatError, match="missing levels"):
        loads_model("{}")
    with pytest.raises(ModelFormatError, match="not valid JSON"):
        loads_model("not json")
    dup = (
        '{"levels": [1, 1, 1],'
        ' "edges": [["d.1", "z1.1"], ["d.1", "z1.1"], ["z1.1", "x"]],'
        ' "mechanisms": {"x": {"family": "piecewise-table", "params": []}},'
        ' "roots": {"1": [{"kind": "degenerate", "value": 0.0}]}}'
    )
    with pytest.raises(ModelFormatError, match="duplicate edge"):
        loads_model(dup)


def test_round_trip_presets_and_corpus():
    models = [layered_demo(), chain_model(), two_root_separate(),
              two_root_joint(), location_scale_chain()]
    models += [corpus.finite_model(seed) for seed in range(10)]
    for model in models:
        text = dumps_model(model)
        again = loads_model(text)
        assert again == model
        # and the canonical text itself is a fixed point
        assert dumps_model(again) == text


def test_no_same_level_connection_via_closure():
    for model in [layered_demo()] + [corpus.finite_model(s) for s in range(10)]:
        reach = {}
        for (p, c) in model.edges:
            reach.setdefault(p, set()).add(c)
        # Transitive closure; levels must strictly increase along paths.
        frontier = {v: set(ch) for v, ch in reach.items()}
        closed = {v: set(ch) for v, ch in reach.items()}
        while any(frontier.values()):
            nxt = {}
            for v, mids in frontier.items():
                new = set()
                for m in mids:
                    new |= reach.get(m, set())
                new -= closed.get(v, set())
                if new:
                    closed.setdefault(v, set()).update(new)
                    nxt[v] = new
            frontier = nxt
        for v, descendants in closed.items():
            assert all(d.level > v.level for d in descendants)


def test_validate_flags_unpaired_root_edge():
    demo = layered_demo()
    edges = set(demo.edges) | {(V("d.1"), V("z1.2"))}
    report = validate(HierModel(widths=demo.widths, edges=frozenset(edges),
                                mechanisms=demo.mechanisms, roots=demo.roots))
    assert any("root pairing violated" in v for v in report.violations)


def test_missing_mechanism_and_parent():
    demo = layered_demo()
    mechs = dict(demo.mechanisms)
    del mechs[V("z2.1")]
    report = validate(HierModel(widths=demo.widths, edges=demo.edges,
                                mechanisms=mechs, roots=demo.roots))
    assert any("z2.1 has no mechanism" in v for v in report.violations)

    edges = {e for e in demo.edges if e[1] != V("z2.4")}
    report = validate(HierModel(widths=demo.widths, edges=frozenset(edges),
                                mechanisms=demo.mechanisms, roots=demo.roots))
    assert any("z2.4 has no parents" in v for v in report.violations)


def test_piecewise_table_key_arity_checked():
    m = corpus.finite_model(0)
    v = next(iter(sorted(m.mechanisms)))
    table = {(0.0, 0.0, 0.0, 0.0, 0.0): 1.0}
    bad = dict(m.mechanisms)
    bad[v] = MechanismSpec(family="piecewise-table", table=table,
                           noise_family=None, noise_scale=0.0)
    report = validate(HierModel(widths=m.widths, edges=m.edges,
                                mechanisms=bad, roots=m.roots))
    assert any("table key arity" in viol for viol in report.violations)
