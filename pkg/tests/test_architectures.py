import numpy as np
import pytest

from gorge_gauge.architectures import (
    ArchitectureSpec,
    build_fidelity_product,
    build_hea,
    build_hva_heisenberg,
    build_roa_problem,
    build_tensor_product,
    build_uccsd,
    double_excitations,
    excitation_generator,
    ghz_plus_minus,
    neel_cat,
    single_excitations,
    tilted_field_observable,
    uccsd_generators,
    uccsd_parameter_labels,
)
from gorge_gauge.bounds import curvatures
from gorge_gauge.circuit import evaluate_loss
from gorge_gauge.operators import OperatorSum, spectrum


def test_parameter_and_generator_counts():
    assert build_tensor_product(5).n_params == 15
    assert build_tensor_product(5, correlated=True).n_params == 1
    assert build_tensor_product(5, correlated=True).circuit.n_generators == 15
    assert build_hea(4, 3).n_params == 24
    assert build_hva_heisenberg(4, 5).n_params == 15
    assert build_hva_heisenberg(4, 5, trotter=True).n_params == 3
    assert build_uccsd(4, 2).n_params == 2 * (6 + 1)
    assert build_uccsd(6, 2, trotter=True).n_params == 15 + 15


def test_excitation_counts():
    assert len(single_excitations(6)) == 15
    assert len(double_excitations(6)) == 15
    assert single_excitations(3) == [(2, 1), (3, 1), (3, 2)]
    assert double_excitations(4) == [(4, 3, 2, 1)]


def test_initial_states():
    z = OperatorSum.single(4, "ZZZZ").dense()
    psi = ghz_plus_minus(4)
    assert np.vdot(psi, z @ psi).real == pytest.approx(1.0)
    cat = neel_cat(4)
    assert abs(cat[0b0101]) == pytest.approx(2**-0.5)
    assert abs(cat[0b1010]) == pytest.approx(2**-0.5)


def test_losses_at_zero():
    assert evaluate_loss(build_tensor_product(3), np.zeros(9)) == pytest.approx(1.0)
    assert evaluate_loss(build_hea(3, 2, "local"), np.zeros(12)) == pytest.approx(1.0)
    # Neel cat on a ring: every bond is anti-aligned in ZZ and the
    # flip-flop terms have no diagonal part, so the energy is -n.
    assert evaluate_loss(build_hva_heisenberg(4, 1), np.zeros(3)) == pytest.approx(-4.0)
    assert evaluate_loss(build_hva_heisenberg(6, 1), np.zeros(3)) == pytest.approx(-6.0)


def test_single_excitation_pauli_expansion():
    # i(A - A^dag) for a_2^dag a_1 equals (X_1 Y_2 - Y_1 X_2) / 2.
    h = excitation_generator(2, [1], [0])
    ref = OperatorSum.from_list([[0.5, "XY"], [-0.5, "YX"]])
    assert h.allclose(ref)


def test_double_excitation_has_eight_terms_of_weight_one_eighth():
    h = excitation_generator(4, [3, 2], [1, 0])
    assert len(h) == 8
    assert all(abs(abs(t.coefficient) - 0.125) < 1e-12 for t in h.terms)
    assert all(t.letters.count("Y") % 2 == 1 for t in h.terms)


def test_excitation_generators_have_unit_spectral_radius():
    for _, h in uccsd_generators(4):
        ev = h.eigenvalues
        assert max(abs(ev)) == pytest.approx(1.0)


def test_uccsd_labels():
    labels = uccsd_parameter_labels(4, 2)
    assert labels[0] == "21@1"
    assert labels[6] == "4321@1"
    assert len(labels) == 14
    assert uccsd_parameter_labels(4, 2, trotter=True)[0] == "21"


def test_tensor_product_curvatures():
    c = curvatures(build_tensor_product(3))
    np.testing.assert_allclose(np.abs(c), [4, 4, 4, 0, 0, 0, 4, 4, 4], atol=1e-9)


def test_hea_curvatures():
    c = curvatures(build_hea(4, 2, "global"))
    np.testing.assert_allclose(np.abs(c[0::2]), 4, atol=1e-9)
    np.testing.assert_allclose(c[1::2], 0, atol=1e-9)


def test_tilted_field_is_gapped():
    h = tilted_field_observable(3, [0.4, 0.8, 1.1])
    s = spectrum(h)
    assert s.gap == pytest.approx(2.0)
    assert s.eigenvalues[0] == pytest.approx(-3.0)


def test_roa_problem_state_side_gate_is_ry():
    prob = build_roa_problem(4, 2)
    last = prob.circuit.gates[-1]
    assert last.generator.allclose(OperatorSum.single(4, {3: "Y"}))
    assert prob.n_params == 16


@pytest.mark.parametrize("family", ["hva", "uccsd"])
def test_odd_sizes_are_rejected(family):
    with pytest.raises(ValueError):
        ArchitectureSpec(family, 5, 1).build()


def test_spec_builds_every_family():
    for fam in ("tensor_product", "hea", "hva", "uccsd", "roa"):
        prob = ArchitectureSpec(fam, 4, 1).build()
        assert prob.n_qubits == 4
    with pytest.raises(ValueError, match="unknown"):
        ArchitectureSpec("qaoa", 4).build()


def test_fidelity_product_loss():
    prob = build_fidelity_product(3)
    theta = np.array([0.3, -1.1, 2.0])
    assert evaluate_loss(prob, theta) == pytest.approx(1 - np.prod(np.sin(theta) ** 2))
    assert evaluate_loss(prob, np.zeros(3)) == pytest.approx(1.0)
