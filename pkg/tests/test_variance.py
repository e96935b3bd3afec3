import math

import numpy as np
import pytest

from gorge_gauge.circuit import Gate, LossProblem, ParameterizedCircuit
from gorge_gauge.operators import OperatorSum
from gorge_gauge.variance import (
    Moments,
    PatchSpec,
    SweepCurve,
    VarianceEstimate,
    approx_variance,
    default_radii,
    estimate_variance,
    find_rmax,
    sample_offsets,
    variance_sweep,
)

from conftest import random_problem


def cosine_problem() -> LossProblem:
    """``L(theta) = cos(2 theta)``: one R_y on |0> measured in Z."""
    circ = ParameterizedCircuit((Gate(OperatorSum.single(1, "Y"), 0),), 1, 1)
    return LossProblem(circ, np.array([1.0, 0.0], dtype=complex), OperatorSum.single(1, "Z"))


def cosine_variance(r: float) -> float:
    mean = math.sin(2 * r) / (2 * r)
    second = 0.5 + math.sin(4 * r) / (8 * r)
    return second - mean * mean


def test_default_radii():
    r = default_radii()
    assert len(r) == 40
    assert r[0] == pytest.approx(1e-3)
    assert r[-1] == pytest.approx(math.pi)
    assert np.allclose(np.diff(np.log(r)), np.log(r[1] / r[0]))


def test_moment_merge_matches_direct(rng):
    x = rng.gamma(2.0, size=1003)
    merged = Moments()
    for chunk in np.array_split(x, 7):
        merged = merged.merge(Moments.of(chunk))
    direct = Moments.of(x)
    for field in ("n", "mean", "m2", "m3", "m4"):
        assert getattr(merged, field) == pytest.approx(getattr(direct, field), rel=1e-10)
    assert merged.variance == pytest.approx(np.var(x, ddof=1), rel=1e-12)


def test_std_error_of_variance_for_normal_samples(rng):
    # For normal data the standard error of s^2 is about sigma^2 sqrt(2/(n-1)).
    x = rng.normal(0, 2.0, size=200_000)
    se = Moments.of(x).std_error_of_variance
    assert se == pytest.approx(4.0 * math.sqrt(2 / (x.size - 1)), rel=0.02)


def test_offsets_are_reproducible_and_in_range():
    a = sample_offsets(7, 3, range(10), 5)
    b = sample_offsets(7, 3, [4, 5, 6], 5)
    assert np.array_equal(a[4:7], b)
    assert np.all(np.abs(a) <= 1)
    assert not np.array_equal(a, sample_offsets(7, 4, range(10), 5))
    assert not np.array_equal(a, sample_offsets(8, 3, range(10), 5))


def test_estimate_is_thread_count_independent(rng):
    prob = random_problem(rng, 2, 4)
    patch = PatchSpec(np.zeros(4), 0.3)
    one = estimate_variance(prob, patch, 1000, 5, 0, threads=1)
    many = estimate_variance(prob, patch, 1000, 5, 0, threads=3)
    assert one == many


def test_constant_samples_have_exactly_zero_variance():
    x = np.full(1000, 0.1) - 0.1
    assert Moments.of(x).variance == 0.0


def test_constant_loss_has_rounding_level_variance():
    # Z rotations leave |0> invariant, so the loss is constant up to rounding.
    circ = ParameterizedCircuit((Gate(OperatorSum.single(1, "Z"), 0),), 1, 1)
    prob = LossProblem(circ, np.array([1.0, 0.0], dtype=complex), OperatorSum.single(1, "Z"))
    est = estimate_variance(prob, PatchSpec([0.0], 1.0), 500, 1)
    assert est.variance < 1e-30
    assert est.mean == pytest.approx(1.0)


@pytest.mark.parametrize("r", [0.1, 0.7, 2.0])
def test_variance_matches_closed_form(r):
    est = estimate_variance(cosine_problem(), PatchSpec([0.0], r), 20_000, 3)
    assert abs(est.variance - cosine_variance(r)) <= 4 * est.std_error_of_variance


def test_patch_validation():
    with pytest.raises(ValueError):
        PatchSpec([0.0], 0.0)
    with pytest.raises(ValueError, match="length"):
        estimate_variance(cosine_problem(), PatchSpec([0.0, 0.0], 0.1), 10)


def test_sweep_uses_one_stream_per_radius():
    prob = cosine_problem()
    curve = variance_sweep(prob, [0.0], [0.1, 0.2], 300, 9)
    solo = estimate_variance(prob, PatchSpec([0.0], 0.2), 300, 9, radius_index=1)
    assert curve.estimates[1] == solo


def _curve(values):
    radii = np.arange(1, len(values) + 1, dtype=float)
    ests = tuple(VarianceEstimate(0.0, v, 0.0, 10, 0, r) for r, v in zip(radii, values))
    return SweepCurve(radii, ests)


def test_rmax_flags():
    assert find_rmax(_curve([0, 0, 0])).flags == ("no interior maximum",)
    assert "boundary maximum" in find_rmax(_curve([1, 2, 3])).flags
    assert "lower boundary maximum" in find_rmax(_curve([3, 2, 1])).flags
    res = find_rmax(_curve([1, 3, 3, 1]))
    assert res.r_max == 2.0 and res.flags == ()


def test_rmax_refinement_finds_the_true_peak():
    prob = cosine_problem()
    radii = default_radii(12, 0.1, math.pi)
    curve = variance_sweep(prob, [0.0], radii, 4000, 11)
    res = find_rmax(curve, prob, [0.0], 4000, 11)
    grid = np.linspace(0.5, 3.0, 20001)
    true = grid[np.argmax([cosine_variance(r) for r in grid])]
    assert res.refined
    assert res.r_max == pytest.approx(true, rel=0.05)


def test_taylor_approximation_at_small_radius(rng):
    prob = random_problem(rng, 2, 3)
    center = rng.normal(size=3)
    r = 0.02
    est = estimate_variance(prob, PatchSpec(center, r), 20_000, 2)
    assert abs(approx_variance(prob, center, r) - est.variance) <= 4 * est.std_error_of_variance + 1e-9
