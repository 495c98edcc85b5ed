"""Certification of unseen combinations: witness search, blockers, the
figure-style separate-vs-joint contrast, and sweep monotonicity."""

import pytest

import corpus
from hiercm.composability import (cartesian_candidates, check_composability,
                                  enumerate_composable_space, sparsity_sweep)
from hiercm.model import parse_var_name
from hiercm.presets import (chain_model, layered_demo, two_root_joint,
                            two_root_separate)
from hiercm.support import exact_support_table, latent_parent_sets

FIG_SPACE = [(0, 0), (0, 1), (1, 0)]


@pytest.mark.parametrize("seed", range(10))
def test_training_combinations_certify_themselves(seed):
    model = corpus.finite_model(seed)
    space = corpus.training_space(model, seed)
    for d in space:
        verdict = check_composability(model, space, d)
        assert verdict.composable, (seed, d, verdict.blockers)
        assert verdict.blockers == []


def test_separate_roots_certify_the_unseen_combination():
    verdict = check_composability(two_root_separate(), FIG_SPACE, (1, 1))
    assert verdict.composable
    assert verdict.blockers == []
    # lexicographically smallest witnesses over the sorted space
    assert verdict.witnesses == {"z1.1": (1, 0), "z1.2": (0, 1),
                                 "z2.1": (1, 0), "z2.2": (0, 1)}


def test_joint_parent_blocks_the_unseen_combination():
    verdict = check_composability(two_root_joint(), FIG_SPACE, (1, 1))
    assert not verdict.composable
    assert verdict.blockers
    assert {name for name, _ in verdict.blockers} == {"z2.2"}
    # the per-root and separate-parent latents still find witnesses
    assert verdict.witnesses["z1.1"] == (1, 0)
    assert verdict.witnesses["z2.1"] == (1, 0)


def test_enumeration_matches_figure_style_counts():
    sep = enumerate_composable_space(two_root_separate(), FIG_SPACE)
    joint = enumerate_composable_space(two_root_joint(), FIG_SPACE)
    assert sep.candidates == ((0, 0), (0, 1), (1, 0), (1, 1))
    assert sep.composable == ((0, 0), (0, 1), (1, 0), (1, 1))
    assert joint.composable == ((0, 0), (0, 1), (1, 0))


def test_full_space_certifies_every_candidate():
    model = corpus.finite_model(0)
    space = corpus.full_cartesian(model)
    report = enumerate_composable_space(model, space)
    assert report.composable == tuple(sorted(space))


def test_cartesian_candidates_are_per_coordinate_products():
    assert cartesian_candidates(two_root_separate(), FIG_SPACE) == [
        (0, 0), (0, 1), (1, 0), (1, 1)]
    assert cartesian_candidates(two_root_separate(), [(0, 1)]) == [(0, 1)]


def test_sweep_orders_by_edges_and_reports_monotone():
    report = sparsity_sweep([two_root_joint(), two_root_separate()], FIG_SPACE)
    assert [row.edge_count for row in report.rows] == [6, 7]
    assert [row.max_parent_size for row in report.rows] == [1, 2]
    assert [row.composable_count for row in report.rows] == [4, 3]
    assert report.rows[1].composable == ((0, 0), (0, 1), (1, 0))
    assert report.monotone


def test_sweep_rejects_incomparable_families():
    with pytest.raises(ValueError, match="at least two"):
        sparsity_sweep([two_root_separate()], FIG_SPACE)
    with pytest.raises(ValueError, match="widths differ"):
        sparsity_sweep([two_root_separate(), chain_model()], FIG_SPACE)
    sep = two_root_separate()
    v = lambda name: parse_var_name(name, 2)
    other = type(sep)(widths=sep.widths,
                      edges=frozenset(set(sep.edges) | {(v("z1.2"), v("z2.1"))}),
                      mechanisms=sep.mechanisms, roots=sep.roots)
    with pytest.raises(ValueError, match="not nested"):
        sparsity_sweep([two_root_joint(), other], FIG_SPACE)


def test_witnesses_actually_contain_the_query_support():
    # Re-derive containment directly from an exact support table, so a
    # wrong witness cannot hide behind the verdict boolean.
    model = corpus.finite_model(3)
    space = corpus.training_space(model, 3)
    candidates = cartesian_candidates(model, space)
    table = exact_support_table(model, sorted(set(space + candidates)))
    parent_sets = latent_parent_sets(model)
    checked = 0
    for d in candidates:
        verdict = check_composability(model, space, d, table=table)
        if not verdict.composable:
            continue
        for v, names in parent_sets.items():
            witness = verdict.witnesses[v.name()]
            assert witness in space
            query = table.get(names, d).cells
            assert query <= table.get(names, witness).cells
            checked += 1
        for i in range(1, model.n_d + 1):
            assert verdict.witnesses[f"z1.{i}"][i - 1] == d[i - 1]
    assert checked > 0


def test_in_space_combination_certifies_on_the_empirical_route():
    # Continuous latents force sampled supports; a combination inside the
    # space covers itself exactly, so certification cannot fail.
    verdict = check_composability(layered_demo(), [(0, 1), (1, 1)], (1, 1),
                                  n=500)
    assert verdict.composable


def test_space_and_candidate_validation():
    with pytest.raises(ValueError, match="non-empty"):
        check_composability(two_root_separate(), [], (1, 1))
    with pytest.raises(ValueError, match="outside its cardinality"):
        check_composability(two_root_separate(), FIG_SPACE, (1, 5))
    with pytest.raises(ValueError, match="wrong length"):
        check_composability(two_root_separate(), FIG_SPACE, (1, 1, 1))
