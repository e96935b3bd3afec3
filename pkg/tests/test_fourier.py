import json

import numpy as np
import pytest

from gorge_gauge.architectures import build_tensor_product
from gorge_gauge.circuit import Gate, LossProblem, ParameterizedCircuit, evaluate_batch
from gorge_gauge.fourier import (
    SpectrumTooLarge,
    dominant_frequency_weight,
    fourier_coefficients,
    frequency_spectrum,
)
from gorge_gauge.operators import OperatorSum

from conftest import random_problem


def test_single_rotation_has_frequencies_plus_minus_two():
    circ = ParameterizedCircuit((Gate(OperatorSum.single(1, "Y"), 0),), 1, 1)
    prob = LossProblem(circ, np.array([1.0, 0.0], dtype=complex), OperatorSum.single(1, "Z"))
    table = fourier_coefficients(prob)
    got = {float(w[0]): complex(a) for w, a in zip(table.frequencies, table.coefficients)}
    assert set(got) == {-2.0, 2.0}
    assert got[2.0] == pytest.approx(0.5)
    assert got[-2.0] == pytest.approx(0.5)


def test_spectrum_of_shared_parameter_is_a_minkowski_sum():
    spec = frequency_spectrum(build_tensor_product(2, correlated=True))
    # Six Pauli gates share one angle, each contributing {-2, 0, 2}.
    np.testing.assert_allclose(spec.per_parameter[0], np.arange(-12, 13, 2))


@pytest.mark.parametrize("mixed", [False, True])
def test_reconstruction_matches_direct_evaluation(rng, mixed):
    prob = random_problem(rng, 2, 4, n_params=3, mixed=mixed)
    table = fourier_coefficients(prob)
    thetas = rng.uniform(-np.pi, np.pi, size=(20, 3))
    np.testing.assert_allclose(table.evaluate(thetas), evaluate_batch(prob, thetas), atol=1e-10)
    assert table.reality_residual() < 1e-12


def test_grid_limit():
    with pytest.raises(SpectrumTooLarge):
        fourier_coefficients(build_tensor_product(3), limit=10)


def test_dominant_frequency_weight():
    circ = ParameterizedCircuit((Gate(OperatorSum.single(1, "Y"), 0),), 1, 1)
    prob = LossProblem(circ, np.array([1.0, 0.0], dtype=complex), OperatorSum.single(1, "Z"))
    assert dominant_frequency_weight(fourier_coefficients(prob), 0) == pytest.approx(4.0)


def test_json_export(rng):
    table = fourier_coefficients(random_problem(rng, 1, 2))
    data = json.loads(table.to_json())
    assert {"omega", "re", "im"} <= set(data[0])
