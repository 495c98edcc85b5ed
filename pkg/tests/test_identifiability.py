"""Verification of the identifiability conditions: derivative spans,
conditional independence, observation-map injectivity, and component
matching up to permutation and monotone reindexing."""

import math

import numpy as np
import pytest

from hiercm.identifiability import (NOT_VERIFIED, PASS, VIOLATED,
                                    ConstantColumnError,
                                    UnsupportedFamilyError,
                                    check_conditional_independence,
                                    check_invertibility,
                                    check_sufficient_variability,
                                    log_density_derivatives,
                                    match_components, structural_rank_bound)
from hiercm.model import MechanismSpec
from hiercm.presets import (chain_model, constant_variance_chain,
                            decoupled_chain, identity_observation,
                            layered_demo, location_scale_chain,
                            two_root_separate, with_mechanism)
from hiercm.sampling import SampleBatch, sample


# -- derivative vectors -----------------------------------------------------

def test_derivative_vector_closed_form():
    ls = location_scale_chain()  # child mean u, variance exp(u)
    np.testing.assert_allclose(
        log_density_derivatives(ls, 1, [0.0], [0.0]), [0.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(
        log_density_derivatives(ls, 1, [0.0], [1.0]),
        [math.exp(-1), -math.exp(-1)], rtol=1e-12)


def test_constant_variance_freezes_curvature():
    cv = constant_variance_chain()  # gaussian, mean u, sd 0.5 everywhere
    for z, u in [(0.0, 0.0), (1.0, 1.0), (0.3, -0.7)]:
        w = log_density_derivatives(cv, 1, [z], [u])
        assert w[1] == pytest.approx(-4.0, abs=1e-12)
        if z == u:
            assert w[0] == pytest.approx(0.0, abs=1e-12)


def test_decoupled_child_ignores_its_parent():
    dc = decoupled_chain()
    base = log_density_derivatives(dc, 1, [0.3], [0.0])
    for u in (1.0, 2.0, -5.0):
        np.testing.assert_array_equal(
            log_density_derivatives(dc, 1, [0.3], [u]), base)


def test_difference_determinant_closed_form():
    ls = location_scale_chain()
    rows = [log_density_derivatives(ls, 1, [0.0], [float(u)])
            for u in range(3)]
    mat = np.stack([rows[1] - rows[0], rows[2] - rows[0]])
    # |det| = e^-1 (1 - e^-1)^2 for anchors 0, 1, 2 at child value 0
    expected = math.exp(-1) * (1.0 - math.exp(-1)) ** 2
    assert abs(abs(np.linalg.det(mat)) - expected) <= 1e-10


def test_fd_mode_agrees_with_analytic():
    ls = location_scale_chain()
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        z, u = rng.normal(), rng.normal()
        wa = log_density_derivatives(ls, 1, [z], [u])
        wf = log_density_derivatives(ls, 1, [z], [u], mode="fd")
        worst = max(worst, float(np.max(np.abs(wa - wf) / (np.abs(wa) + 1.0))))
    assert worst <= 1e-5


def test_derivative_mode_validation():
    with pytest.raises(ValueError, match="unknown mode"):
        log_density_derivatives(location_scale_chain(), 1, [0.0], [0.0],
                                mode="symbolic")


# -- sufficient variability -------------------------------------------------

def test_structural_rank_bounds():
    assert structural_rank_bound(location_scale_chain(), 1) == 2
    assert structural_rank_bound(constant_variance_chain(), 1) == 1
    assert structural_rank_bound(decoupled_chain(), 1) == 0
    assert structural_rank_bound(chain_model(), 1) == 1


def test_variability_verdicts():
    rep = check_sufficient_variability(location_scale_chain(), 1)
    assert rep.verdict == PASS and rep.passed
    assert rep.rank == rep.target_rank == 2
    assert rep.difference_matrix.shape == (2, 2)

    rep = check_sufficient_variability(constant_variance_chain(), 1)
    assert rep.verdict == VIOLATED and not rep.passed
    assert rep.rank == 1 and rep.structural_bound == 1

    rep = check_sufficient_variability(decoupled_chain(), 1)
    assert rep.verdict == VIOLATED
    assert rep.rank == 0 and rep.structural_bound == 0


def test_variability_rejects_nonsmooth_families():
    with pytest.raises(UnsupportedFamilyError):
        check_sufficient_variability(two_root_separate(), 1)


def test_variability_level_validation():
    with pytest.raises(ValueError, match="no latent children"):
        check_sufficient_variability(location_scale_chain(), 2)


# -- conditional independence ----------------------------------------------

def test_ci_structural_route():
    rep = check_conditional_independence(layered_demo(), 1)
    assert rep.mode == "structural"
    assert len(rep.records) == 6  # pairs among z2.1..z2.4
    assert all(r["basis"] == "structural" and r["statistic"] is None
               for r in rep.records)
    assert rep.all_independent


def test_ci_empirical_holds_on_model_samples():
    batch = sample(layered_demo(), (1, 1), 10_000, 0)
    rep = check_conditional_independence(batch, 1)
    assert rep.mode == "empirical"
    rec = next(r for r in rep.records if r["pair"] == ("z2.1", "z2.4"))
    assert rec["basis"] == "partial-correlation"
    assert rec["independent"] and rec["p_value"] > 0.5  # measured 0.89


def test_ci_detects_injected_dependence():
    batch = sample(layered_demo(), (1, 1), 10_000, 0)
    cols = dict(batch.columns)
    cols["z2.3"] = cols["z2.3"] + cols["z2.2"]
    tainted = SampleBatch(columns=cols, conditioning=batch.conditioning,
                          seed=batch.seed, widths=batch.widths,
                          model_digest=batch.model_digest)
    rep = check_conditional_independence(tainted, 1)
    rec = next(r for r in rep.records if r["pair"] == ("z2.2", "z2.3"))
    assert not rec["independent"]
    assert rec["p_value"] < 1e-6
    assert not rep.all_independent


def test_ci_batch_size_and_test_name_validation():
    small = sample(layered_demo(), (1, 1), 50, 0)
    with pytest.raises(ValueError, match="at least 1000"):
        check_conditional_independence(small, 1)
    big = sample(layered_demo(), (1, 1), 1000, 0)
    with pytest.raises(ValueError, match="unknown test"):
        check_conditional_independence(big, 1, test="chi-squared")


# -- invertibility ----------------------------------------------------------

def test_invertibility_identity_map():
    rep = check_invertibility(identity_observation(), level=1)
    assert rep.dimension_ok and rep.passed
    assert rep.min_singular == pytest.approx(1.0, abs=1e-6)


def test_invertibility_layered_demo():
    rep = check_invertibility(layered_demo(), points=50)
    assert rep.level == 3
    assert rep.dimension_ok and rep.passed
    assert rep.min_singular > 0.2  # measured 0.25 at these points


def test_invertibility_detects_dropped_coordinate():
    # zero out the observation's read of z3.1: that input direction is lost
    broken = with_mechanism(
        layered_demo(), "x",
        MechanismSpec(family="concat-affine",
                      params=(0.0, 0.0) + (1.0, 0.0) * 5,
                      noise_family="gaussian", noise_scale=0.25))
    rep = check_invertibility(broken)
    assert rep.dimension_ok and not rep.passed
    assert rep.min_singular < 1e-6
    assert rep.reason == "rank-deficient Jacobian at a sampled point"


def test_invertibility_dimension_deficit():
    rep = check_invertibility(chain_model(), level=1)
    assert not rep.dimension_ok and not rep.passed
    assert rep.reason == ("dimension deficit: the map consumes 3 coordinates "
                          "(1 level values + 2 noise) but the observation "
                          "has only 2")


def test_invertibility_level_validation():
    with pytest.raises(ValueError, match="not a latent level"):
        check_invertibility(location_scale_chain(), level=5)


# -- component matching -----------------------------------------------------

def test_matching_identity():
    z = np.random.default_rng(0).normal(size=(1000, 3))
    res = match_components(z, z)
    assert res.permutation == (0, 1, 2)
    assert res.passed
    assert all(s == pytest.approx(1.0, abs=1e-12) for s in res.scores)
    assert all(res.invertible)


@pytest.mark.parametrize("seed", range(10))
def test_matching_survives_monotone_reindexing(seed):
    z = np.random.default_rng(seed).normal(size=(10_000, 4))
    estimate = (z ** 3)[:, ::-1]  # strictly monotone map, reversed order
    res = match_components(z, estimate)
    assert res.permutation == (3, 2, 1, 0)
    assert min(res.scores) >= 0.99
    assert res.passed


def test_matching_rejects_two_into_one_mixture():
    z = np.random.default_rng(0).normal(size=(10_000, 3))
    estimate = z.copy()
    estimate[:, 0] = (z[:, 0] + z[:, 1]) / math.sqrt(2)
    res = match_components(z, estimate)
    assert res.permutation == (0, 1, 2)
    assert not res.passed
    # equal-variance independent addends: correlation with either is 1/sqrt2
    assert abs(res.scores[0] - 1.0 / math.sqrt(2)) <= 0.05


def test_matching_input_validation():
    z = np.random.default_rng(0).normal(size=(100, 2))
    flat = z.copy()
    flat[:, 1] = 2.5
    with pytest.raises(ConstantColumnError, match="component 2"):
        match_components(z, flat)
    with pytest.raises(ValueError, match="shapes differ"):
        match_components(z, z[:50])
    with pytest.raises(ValueError, match="at least 4 rows"):
        match_components(z[:2], z[:2])
