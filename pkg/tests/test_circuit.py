import json

import numpy as np
import pytest

from gorge_gauge.circuit import (
    DiagonalUnitary,
    Gate,
    LossProblem,
    ParameterizedCircuit,
    apply_exponential,
    backprop_observable,
    circuit_unitary,
    evaluate_batch,
    evaluate_loss,
    fd_mixed_fourth_derivative,
    fd_second_derivative,
    loss_derivative,
    mixed_fourth_derivative,
    parse_fixed_unitary,
    second_derivative,
)
from gorge_gauge.operators import OperatorSum, matrix_exponential

from conftest import random_pauli_sum, random_problem


def dense_loss(problem: LossProblem, theta: np.ndarray) -> float:
    """Reference loss from explicit matrix products, observable-side gate first."""
    d = 1 << problem.n_qubits
    u = np.eye(d, dtype=complex)
    for g in problem.circuit.gates:
        v = g.fixed.dense() if g.fixed is not None else np.eye(d)
        u = u @ v @ matrix_exponential(g.generator, g.offset + theta[g.param])
    st = problem.state
    rho = np.outer(st, st.conj()) if st.ndim == 1 else st
    return float(np.trace(u @ rho @ u.conj().T @ problem.observable.dense()).real)


@pytest.mark.parametrize("mixed", [False, True])
def test_evaluation_matches_matrix_products(rng, mixed):
    for _ in range(5):
        prob = random_problem(rng, 3, 5, n_params=4, mixed=mixed)
        theta = rng.uniform(-np.pi, np.pi, size=4)
        assert evaluate_loss(prob, theta) == pytest.approx(dense_loss(prob, theta), abs=1e-12)


def test_batch_matches_single_evaluations(rng):
    prob = random_problem(rng, 2, 4)
    thetas = rng.uniform(-1, 1, size=(7, 4))
    batch = evaluate_batch(prob, thetas)
    np.testing.assert_allclose(batch, [evaluate_loss(prob, t) for t in thetas], atol=1e-13)


@pytest.mark.parametrize(
    "h",
    [
        OperatorSum.from_list([[0.7, "IXI"], [0.3, "IYI"], [-0.2, "IZI"], [0.1, "III"]]),
        OperatorSum.from_list([[0.5, "XYZ"], [0.4, "ZZI"]]),
        OperatorSum.from_list([[0.5, "XIY"], [0.3, "YXZ"]]),
        OperatorSum.from_list([[0.5, "ZIZ"], [0.3, "IZI"]]),
    ],
)
def test_exponential_strategies_agree_with_dense(rng, h):
    psi = rng.normal(size=(3, 8)) + 1j * rng.normal(size=(3, 8))
    t = rng.normal(size=3)
    ref = np.array([matrix_exponential(h, ti) @ p for ti, p in zip(t, psi)])
    np.testing.assert_allclose(apply_exponential(h, psi, t), ref, atol=1e-13)
    np.testing.assert_allclose(apply_exponential(h, psi[0], t[0]), ref[0], atol=1e-13)


def test_backprop_observable_gives_the_loss(rng):
    prob = random_problem(rng, 2, 3)
    theta = rng.normal(size=3)
    o_h = backprop_observable(prob, theta)
    st = prob.state
    assert np.vdot(st, o_h @ st).real == pytest.approx(evaluate_loss(prob, theta), abs=1e-12)
    u = circuit_unitary(prob.circuit, theta)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(4), atol=1e-12)


def test_derivatives_match_finite_differences(rng):
    prob = random_problem(rng, 3, 5, n_params=3)
    theta = rng.uniform(-np.pi, np.pi, size=3)
    for p in range(3):
        assert second_derivative(prob, theta, p) == pytest.approx(fd_second_derivative(prob, theta, p), abs=1e-6)
        for q in range(3):
            a = mixed_fourth_derivative(prob, theta, p, q)
            assert a == pytest.approx(fd_mixed_fourth_derivative(prob, theta, p, q), abs=max(1e-6, 1e-4 * abs(a)))


def test_first_derivative_matches_parameter_shift():
    # For a single Pauli generator the loss is a pure sinusoid in theta.
    n = 1
    prob = LossProblem(
        ParameterizedCircuit((Gate(OperatorSum.single(n, "Y"), 0),), n, 1),
        np.array([1.0, 0.0], dtype=complex),
        OperatorSum.single(n, "Z"),
    )
    theta = np.array([0.3])
    shift = (evaluate_loss(prob, theta + np.pi / 4) - evaluate_loss(prob, theta - np.pi / 4))
    assert loss_derivative(prob, theta, {0: 1}) == pytest.approx(shift, abs=1e-12)
    assert evaluate_loss(prob, theta) == pytest.approx(np.cos(2 * 0.3))


def test_offsets_shift_the_landscape(rng):
    prob = random_problem(rng, 2, 3)
    center = rng.normal(size=3)
    shifted = LossProblem(prob.circuit.with_offsets(center), prob.state, prob.observable)
    x = rng.normal(size=3)
    assert evaluate_loss(shifted, x) == pytest.approx(evaluate_loss(prob, center + x), abs=1e-12)


def test_correlation_map_must_be_surjective():
    g = Gate(OperatorSum.single(1, "X"), 0)
    with pytest.raises(ValueError, match="unused parameters \\[2\\]"):
        ParameterizedCircuit((g,), 1, 2)


def test_generators_must_be_hermitian():
    with pytest.raises(ValueError, match="Hermitian"):
        Gate(OperatorSum.single(1, "X", 1j), 0)


def test_state_validation():
    circ = ParameterizedCircuit((Gate(OperatorSum.single(1, "X"), 0),), 1, 1)
    with pytest.raises(ValueError, match="normalised"):
        LossProblem(circ, np.array([1.0, 1.0]), OperatorSum.single(1, "Z"))


def test_json_round_trip(rng):
    gates = (
        Gate(random_pauli_sum(rng, 2, 2), 0, DiagonalUnitary.cz_pairs(2, [(0, 1)])),
        Gate(random_pauli_sum(rng, 2, 1), 1, parse_fixed_unitary([[0.3, "XY"]], 2)),
        Gate(random_pauli_sum(rng, 2, 1), 0),
    )
    circ = ParameterizedCircuit(gates, 2, 2)
    back = ParameterizedCircuit.from_json(json.dumps(circ.to_json()))
    st = np.array([1, 0, 0, 0], dtype=complex)
    obs = OperatorSum.single(2, "ZX")
    theta = np.array([0.4, -1.1])
    assert evaluate_loss(LossProblem(back, st, obs), theta) == pytest.approx(
        evaluate_loss(LossProblem(circ, st, obs), theta), abs=1e-13
    )
    assert circ.to_json()["gates"][0]["v"] == "CZ(1,2)"
    assert circ.to_json()["gates"][0]["s"] == 1


def test_cz_string_parsing():
    u = parse_fixed_unitary("CZ(1,2) CZ(2,3)", 3)
    np.testing.assert_allclose(np.diag(u.dense()).real, [1, 1, 1, -1, 1, 1, -1, 1])
    with pytest.raises(ValueError):
        parse_fixed_unitary("CNOT(1,2)", 3)


def test_imaginary_loss_is_rejected():
    circ = ParameterizedCircuit((Gate(OperatorSum.single(1, "X"), 0),), 1, 1)
    with pytest.raises(ValueError):
        LossProblem(circ, np.array([1.0, 0.0]), OperatorSum.single(1, "X", 1j))
