import json
import math

import numpy as np
import pytest

from gorge_gauge.architectures import build_hea, build_hva_heisenberg, build_roa_problem, build_tensor_product
from gorge_gauge.bounds import (
    AssumptionViolated,
    NoCertifiedPatch,
    TemporalCorrelationError,
    bound_report,
    curvatures,
    effective_frequency,
    frequency_profile,
    merge_spatial,
    patch_moments_quadrature,
    r_patch_correlated,
    r_patch_uncorrelated,
    region_of_attraction,
    upper_bound_check,
)
from gorge_gauge.circuit import Gate, LossProblem, ParameterizedCircuit, loss_derivative
from gorge_gauge.operators import OperatorSum
from gorge_gauge.variance import PatchSpec, estimate_variance

from conftest import random_problem


def test_tensor_product_radius_closed_form():
    for n in (2, 3, 4):
        rep = r_patch_uncorrelated(build_tensor_product(n))
        assert rep.r_patch**2 == pytest.approx(9 / (2**7 * (2 * n + 7)), rel=1e-12)
        assert rep.theorem == "uncorrelated"


def test_correlated_radius_closed_form():
    for n in (2, 3, 4):
        rep = r_patch_correlated(build_tensor_product(n, correlated=True))
        assert rep.r_patch**2 == pytest.approx(1 / (5184 * n * n), rel=1e-12)


def test_dispatch_picks_the_correlated_bound_for_temporal_sharing():
    rep = bound_report(build_tensor_product(2, correlated=True))
    assert rep.theorem == "correlated"
    with pytest.raises(TemporalCorrelationError, match="temporal correlation"):
        r_patch_uncorrelated(build_tensor_product(2, correlated=True))


def test_spatial_sharing_is_merged():
    n = 2
    gates = (
        Gate(OperatorSum.single(n, {0: "Y"}), 0),
        Gate(OperatorSum.single(n, {1: "Y"}), 0),
        Gate(OperatorSum.single(n, {0: "X"}), 1),
    )
    circ = ParameterizedCircuit(gates, n, 2)
    merged = merge_spatial(circ)
    assert merged.n_generators == 2
    assert merged.gates[0].generator.allclose(OperatorSum.from_list([[1.0, "YI"], [1.0, "IY"]]))


def test_lower_bound_holds_on_a_small_hea():
    prob = build_hea(2, 1, "global")
    rep = r_patch_uncorrelated(prob)
    for f in (0.5, 1.0):
        r = f * rep.r_patch
        est = estimate_variance(prob, PatchSpec(np.zeros(prob.n_params), r), 2000, 4)
        assert est.variance + 3 * est.std_error_of_variance >= rep.variance_lb_at(r)
    assert rep.variance_lb_at(rep.r_patch) >= rep.floor > 0


def test_zero_curvature_everywhere_is_reported():
    circ = ParameterizedCircuit((Gate(OperatorSum.single(1, "Z"), 0),), 1, 1)
    prob = LossProblem(circ, np.array([1.0, 0.0], dtype=complex), OperatorSum.single(1, "Z"))
    with pytest.raises(NoCertifiedPatch, match="no certified patch"):
        r_patch_uncorrelated(prob)
    with pytest.raises(NoCertifiedPatch):
        r_patch_uncorrelated(build_tensor_product(2), indices=[2])


def test_curvatures_are_signed_second_derivatives(rng):
    prob = random_problem(rng, 2, 3)
    center = rng.normal(size=3)
    c = curvatures(prob, center)
    for p in range(3):
        assert c[p] == pytest.approx(loss_derivative(prob, center, {p: 2}), abs=1e-12)


def test_effective_frequency_bounds():
    prob = build_hea(3, 1, "global")
    prof = frequency_profile(prob, None, rows=[0])
    for mu in range(prob.n_params):
        w = effective_frequency(prob, None, mu)
        assert 0 <= w <= prof.position_max[mu] + 1e-12


def test_commutator_bound_is_never_tighter_than_exact():
    prob = build_hea(3, 1, "global")
    exact = frequency_profile(prob, None, rows=[0, 2])
    loose = frequency_profile(prob, None, rows=[0, 2], method="commutator-bound")
    assert exact.pairwise_eff.keys() == loose.pairwise_eff.keys()
    for key, w in exact.pairwise_eff.items():
        assert w <= loose.pairwise_eff[key] + 1e-12
    with pytest.raises(ValueError, match="method"):
        frequency_profile(prob, None, method="rough")


def test_hva_uses_the_locality_constant():
    rep = r_patch_uncorrelated(build_hva_heisenberg(6, 1))
    assert any("locality" in note for note in rep.notes)


def test_report_is_json_with_one_based_indices():
    rep = r_patch_uncorrelated(build_tensor_product(2))
    data = json.loads(rep.to_json())
    assert data["indices"] == [1, 2, 5, 6]
    assert data["r_patch_squared"] == pytest.approx(rep.r_patch**2)


def test_roa_report_on_the_exact_minimum():
    prob = build_roa_problem(2, 1, seed=3)
    # With one R_z R_y pair per qubit the ground state is reachable exactly:
    # R_y angle a/2 rotates |0> onto the tilted-field axis.
    angles = np.random.default_rng(3).uniform(0.3, 1.2, size=2)
    theta = np.zeros(4)
    theta[1::2] = angles / 2
    assert prob.circuit.gates[1].generator.allclose(OperatorSum.single(2, {0: "Y"}))
    rep = region_of_attraction(prob, theta)
    assert rep.epsilon < 1e-7
    assert rep.condition_ok
    assert rep.r_patch_safe <= rep.r_patch_star
    est = estimate_variance(prob, PatchSpec(theta, rep.r_patch_star), 2000, 8)
    assert est.variance + 3 * est.std_error_of_variance >= rep.variance_lb


def test_roa_rejects_degenerate_ground_states():
    prob = build_hea(2, 1, "global")
    with pytest.raises(AssumptionViolated, match="degenerate"):
        region_of_attraction(prob, np.zeros(prob.n_params))


def test_roa_rejects_a_shared_state_side_parameter():
    n = 1
    gates = (Gate(OperatorSum.single(n, "Y"), 0), Gate(OperatorSum.single(n, "Z"), 1), Gate(OperatorSum.single(n, "Y"), 0))
    prob = LossProblem(ParameterizedCircuit(gates, n, 2), np.array([1.0, 0.0], dtype=complex), OperatorSum.single(n, "Z", 1.0))
    with pytest.raises(AssumptionViolated, match="shared"):
        region_of_attraction(prob, np.zeros(2))


def test_quadrature_moments_of_a_cosine():
    circ = ParameterizedCircuit((Gate(OperatorSum.single(1, "Y"), 0),), 1, 1)
    prob = LossProblem(circ, np.array([1.0, 0.0], dtype=complex), OperatorSum.single(1, "Z"))
    r = 1.3
    mean, second = patch_moments_quadrature(prob, [0.0], r)
    assert mean == pytest.approx(math.sin(2 * r) / (2 * r), abs=1e-13)
    assert second == pytest.approx(0.5 + math.sin(4 * r) / (8 * r), abs=1e-13)


def test_upper_bound_by_quadrature_and_sampling():
    small = build_tensor_product(1)
    rep = upper_bound_check(small, np.zeros(3), math.pi, 0.5)
    assert rep.method == "quadrature" and rep.holds
    big = build_hea(2, 2, "global")
    rep = upper_bound_check(big, np.zeros(big.n_params), math.pi, 1.0, n_samples=2000, seed=3)
    assert rep.method == "monte-carlo" and rep.holds


def test_upper_bound_notes_a_nonzero_mean():
    # cos(2 theta) + 1 has mean 1 over the full period.
    circ = ParameterizedCircuit((Gate(OperatorSum.single(1, "Y"), 0),), 1, 1)
    obs = OperatorSum.from_list([[1.0, "Z"], [1.0, "I"]])
    prob = LossProblem(circ, np.array([1.0, 0.0], dtype=complex), obs)
    rep = upper_bound_check(prob, [0.0], math.pi, 0.3)
    assert not rep.zero_mean_ok
    assert rep.notes and rep.holds
