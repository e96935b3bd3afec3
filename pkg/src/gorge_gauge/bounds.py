"""Certified patch radii, variance lower bounds and the variance upper bound.

All operator quantities are evaluated on dense matrices after folding the
centre into the fixed unitaries, so every formula is evaluated at the
origin of the recentred problem.  Positions are 0-based and observable-first.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .circuit import (
    DiagonalUnitary,
    Gate,
    LossProblem,
    ParameterizedCircuit,
    circuit_unitary,
    evaluate_batch,
    loss_derivative,
)
from .operators import OperatorSum, max_frequency, spectral_norm, spectrum
from .variance import PatchSpec, estimate_second_moment, sample_offsets

CURVATURE_TOL = 1e-9


class NoCertifiedPatch(ValueError):
    """No selected index has non-vanishing curvature."""


class TemporalCorrelationError(ValueError):
    """The circuit shares a parameter across non-adjacent or non-commuting gates."""


class AssumptionViolated(ValueError):
    """A precondition of the region-of-attraction bound fails."""


# ---------------------------------------------------------------------------
# Dense propagation helpers
# ---------------------------------------------------------------------------
class _Conjugator:
    """``A -> V^dagger A V`` for one gate's fixed part with the centre folded in."""

    def __init__(self, gate: Gate):
        self.kind = "identity"
        if gate.offset == 0.0 and gate.fixed is None:
            return
        if gate.offset == 0.0 and isinstance(gate.fixed, DiagonalUnitary):
            self.kind = "diagonal"
            ph = gate.fixed.phases
            self.weights = np.outer(ph.conj(), ph)
            return
        self.kind = "dense"
        self.v = gate.fixed_dense()

    def __call__(self, a: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return a
        if self.kind == "diagonal":
            return a * self.weights
        return self.v.conj().T @ a @ self.v


def _double_commutator(h: np.ndarray, a: np.ndarray) -> np.ndarray:
    ha = h @ a
    ah = a @ h
    return h @ (ha - ah) - (ha - ah) @ h


@dataclass
class FrequencyProfile:
    """Maximal and effective frequencies of a recentred problem.

    ``position_max[mu]`` is the spectral spread of generator ``mu``;
    ``parameter_max[q]`` sums it over the gates sharing parameter ``q``.
    ``position_eff[mu]`` is the effective frequency at position ``mu`` and
    ``pairwise_eff[(l, mu)]`` the pairwise one for ``l < mu``.
    """

    position_max: np.ndarray
    parameter_max: np.ndarray
    position_eff: np.ndarray
    pairwise_eff: dict[tuple[int, int], float] = field(default_factory=dict)
    method: str = "exact"

    def as_dict(self) -> dict:
        return {
            "position_max": self.position_max.tolist(),
            "parameter_max": self.parameter_max.tolist(),
            "position_eff": self.position_eff.tolist(),
            "pairwise_eff": [[l, mu, v] for (l, mu), v in sorted(self.pairwise_eff.items())],
            "method": self.method,
        }


def _recentred(problem: LossProblem, center: Sequence[float] | None) -> LossProblem:
    if center is None:
        return problem
    center = np.asarray(center, dtype=float)
    if not np.any(center):
        return problem
    return problem.recentered(center)


def frequency_profile(
    problem: LossProblem,
    center: Sequence[float] | None = None,
    rows: Iterable[int] = (),
    method: str = "exact",
) -> FrequencyProfile:
    """Frequencies at ``center``; pairwise values are computed for ``l in rows``.

    ``method="commutator-bound"`` replaces each pairwise value by the looser
    commutator-norm bound ``2 ||H_mu|| * omega_eff_l``.
    """
    if method not in ("exact", "commutator-bound"):
        raise ValueError("method must be 'exact' or 'commutator-bound'")
    prob = _recentred(problem, center)
    gates = prob.circuit.gates
    conj = [_Conjugator(g) for g in gates]
    hs = [g.generator.dense() for g in gates]
    pos_max = np.array([max_frequency(g.generator) for g in gates])
    par_max = np.zeros(prob.n_params)
    for g, w in zip(gates, pos_max):
        par_max[g.param] += w
    rows = sorted(set(rows))
    d_ops: list[np.ndarray] = []
    d = prob.observable.dense()
    eff = np.empty(len(gates))
    for mu, g in enumerate(gates):
        d = conj[mu](d)
        d_ops.append(d if mu in rows else None)  # type: ignore[arg-type]
        eff[mu] = math.sqrt(spectral_norm(_double_commutator(hs[mu], d), hermitian=True))
    pair: dict[tuple[int, int], float] = {}
    for l in rows:
        if method == "commutator-bound":
            for mu in range(l + 1, len(gates)):
                pair[(l, mu)] = 2 * spectral_norm(hs[mu], hermitian=True) * eff[l]
            continue
        x = _double_commutator(hs[l], d_ops[l])
        for mu in range(l + 1, len(gates)):
            x = conj[mu](x)
            if not np.any(np.abs(x) > 1e-13):
                pair[(l, mu)] = 0.0
                continue
            pair[(l, mu)] = math.sqrt(spectral_norm(_double_commutator(hs[mu], x), hermitian=True))
    return FrequencyProfile(pos_max, par_max, eff, pair, method)


def effective_frequency(problem: LossProblem, center: Sequence[float] | None, mu: int) -> float:
    """``sqrt(|| d^2 [U^dag O U] / d theta_mu^2 ||)`` at ``center`` for position ``mu``."""
    return float(frequency_profile(problem, center).position_eff[mu])


def pairwise_effective_frequency(problem: LossProblem, center: Sequence[float] | None, l: int, mu: int) -> float:
    """Fourth-order effective frequency for positions ``l < mu``."""
    if not 0 <= l < mu < problem.circuit.n_generators:
        raise IndexError("pairwise frequencies need 0 <= l < mu < M")
    return float(frequency_profile(problem, center, rows=[l]).pairwise_eff[(l, mu)])


def curvatures(problem: LossProblem, center: Sequence[float] | None = None) -> np.ndarray:
    """Signed ``d^2 L / d theta_p^2`` for every parameter at ``center``."""
    prob = _recentred(problem, center)
    zero = np.zeros(prob.n_params)
    return np.array([loss_derivative(prob, zero, {p: 2}) for p in range(prob.n_params)])


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------
@dataclass
class BoundReport:
    """Certified patch for one problem and centre.

    For each selected index ``l`` the lower bound uses
    ``(r^4/45) [(c_l - A_l r^2 / 6)^2 - beta_l r^2]``; for the correlated
    bound ``A = 6 gamma`` with ``gamma`` the coefficient of ``r^2`` in the
    curvature correction.
    """

    theorem: str
    center: np.ndarray
    indices: list[int]
    signed_curvatures: np.ndarray
    a_terms: np.ndarray
    beta_terms: np.ndarray
    r_patch: float
    limiting_index: int
    norm_observable: float
    gamma: float | None = None
    profile: FrequencyProfile | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def curvatures(self) -> np.ndarray:
        return np.abs(self.signed_curvatures)

    def radius_of(self, c: float, a: float, beta: float) -> float:
        return math.sqrt(9 * c * c / (8 * c * a + 24 * beta))

    def variance_lb_at(self, r: float) -> float:
        c, a, b = self.curvatures, self.a_terms, self.beta_terms
        r2 = r * r
        return float(np.sum(r2 * r2 / 45 * ((c - a * r2 / 6) ** 2 - b * r2)))

    @property
    def floor(self) -> float:
        """``(1/72) (sum c_l^2) r_patch^4``."""
        return float(np.sum(self.curvatures**2) * self.r_patch**4 / 72)

    def as_dict(self) -> dict:
        out = {
            "theorem": self.theorem,
            "center": self.center.tolist(),
            "indices": [i + 1 for i in self.indices],
            "signed_curvatures": self.signed_curvatures.tolist(),
            "curvatures": self.curvatures.tolist(),
            "A": self.a_terms.tolist(),
            "beta": self.beta_terms.tolist(),
            "gamma": self.gamma,
            "r_patch": self.r_patch,
            "r_patch_squared": self.r_patch**2,
            "limiting_index": self.limiting_index + 1,
            "norm_observable": self.norm_observable,
            "variance_lb_at_r_patch": self.variance_lb_at(self.r_patch),
            "floor": self.floor,
            "notes": self.notes,
        }
        if self.profile is not None:
            out["frequencies"] = self.profile.as_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


# ---------------------------------------------------------------------------
# Uncorrelated / spatially correlated bound
# ---------------------------------------------------------------------------
def merge_spatial(circuit: ParameterizedCircuit) -> ParameterizedCircuit:
    """Fuse adjacent commuting gates that share a parameter into one gate.

    Raises :class:`TemporalCorrelationError` when sharing remains after
    fusion (the correlated bound applies instead).
    """
    if circuit.is_uncorrelated:
        return circuit
    fused: list[Gate] = []
    for g in circuit.gates:
        prev = fused[-1] if fused else None
        if (
            prev is not None
            and prev.param == g.param
            and g.fixed is None
            and prev.offset == g.offset
            and prev.generator.commutator(g.generator).allclose(OperatorSum.zero(circuit.n_qubits))
        ):
            fused[-1] = replace(prev, generator=prev.generator + g.generator)
        else:
            fused.append(g)
    if len(fused) != circuit.n_params:
        raise TemporalCorrelationError("temporal correlation: use the correlated-parameter bound")
    return ParameterizedCircuit(tuple(fused), circuit.n_qubits, circuit.n_params)


def locality_beta(problem: LossProblem) -> float | None:
    """Remainder constant ``32 N_O^2 s^6 / 3`` for a local first generator.

    ``N_O`` is the absolute coefficient sum of the observable and ``s`` the
    largest total weight of first-generator terms anticommuting with one
    observable term.  Returns ``None`` when the first generator's terms do
    not commute or it carries a fixed unitary.
    """
    g0 = problem.circuit.gates[0]
    if g0.fixed is not None or g0.offset != 0.0 or not g0.generator.terms_commute:
        return None
    n_o = sum(abs(t.coefficient) for t in problem.observable.terms)
    s = max(
        (sum(abs(h.coefficient) for h in g0.generator.anticommuting_part(p).terms) for p in problem.observable.terms),
        default=0.0,
    )
    return 32 * n_o**2 * s**6 / 3


def r_patch_uncorrelated(
    problem: LossProblem,
    center: Sequence[float] | None = None,
    indices: Iterable[int] | None = None,
    method: str = "exact",
) -> BoundReport:
    """Certified radius for uncorrelated (or spatially correlated) parameters."""
    m = problem.n_params
    center = np.zeros(m) if center is None else np.asarray(center, dtype=float)
    merged = merge_spatial(problem.circuit)
    base = replace(problem, circuit=merged)
    prob = _recentred(base, center)
    signed = curvatures(prob)
    if indices is None:
        lam = [l for l in range(m) if abs(signed[l]) > CURVATURE_TOL]
    else:
        lam = sorted(set(int(i) for i in indices))
        if any(abs(signed[l]) <= CURVATURE_TOL for l in lam):
            raise NoCertifiedPatch("no certified patch: a selected index has vanishing curvature")
    if not lam:
        raise NoCertifiedPatch("no certified patch: all curvatures vanish")
    prof = frequency_profile(prob, None, rows=lam, method=method)
    w_max, w_eff = prof.position_max, prof.position_eff
    cum_eff = np.concatenate([[0.0], np.cumsum(w_eff**2)])
    norm_o = spectral_norm(prob.observable)
    notes: list[str] = []
    loc_beta = locality_beta(prob) if problem.local and not np.any(center) else None
    a_terms, betas = [], []
    for l in lam:
        a = 4 * w_max[l] ** 2 * cum_eff[l] + sum(prof.pairwise_eff[(l, mu)] ** 2 for mu in range(l + 1, m))
        if l == 0:
            beta = 2 * w_max[0] ** 2 * w_eff[0] ** 4 / 3
            if loc_beta is not None:
                beta = loc_beta
                notes.append("first-position remainder uses the locality constant")
        else:
            beta = 32 * w_max[l] ** 6 * norm_o**2 / 3
        a_terms.append(a)
        betas.append(beta)
    a_arr, b_arr = np.array(a_terms), np.array(betas)
    c_abs = np.abs(signed[lam])
    radii2 = 9 * c_abs**2 / (8 * c_abs * a_arr + 24 * b_arr)
    k = int(np.argmin(radii2))
    return BoundReport(
        theorem="uncorrelated",
        center=center,
        indices=lam,
        signed_curvatures=signed[lam],
        a_terms=a_arr,
        beta_terms=b_arr,
        r_patch=float(math.sqrt(radii2[k])),
        limiting_index=lam[k],
        norm_observable=norm_o,
        profile=prof,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# Correlated bound
# ---------------------------------------------------------------------------
def r_patch_correlated(
    problem: LossProblem, center: Sequence[float] | None = None, p: int | None = None
) -> BoundReport:
    """Certified radius for arbitrarily correlated parameters, for parameter ``p``."""
    m = problem.n_params
    center = np.zeros(m) if center is None else np.asarray(center, dtype=float)
    prob = _recentred(problem, center)
    signed = curvatures(prob)
    if p is None:
        p = int(np.argmax(np.abs(signed)))
    if not 0 <= p < m:
        raise IndexError(f"parameter index {p} out of range")
    c = abs(signed[p])
    if c <= CURVATURE_TOL:
        raise NoCertifiedPatch("no certified patch: vanishing curvature")
    w = np.zeros(m)
    for g in prob.circuit.gates:
        w[g.param] += max_frequency(g.generator)
    norm_o = spectral_norm(prob.observable)
    others = float(np.sum(w**2) - w[p] ** 2)
    gamma = 8 / 3 * norm_o * w[p] ** 2 * others
    beta = 32 / 3 * norm_o**2 * w[p] ** 6
    a = 6 * gamma
    r2 = 9 * c * c / (8 * c * a + 24 * beta)
    eff = np.zeros(prob.circuit.n_generators)
    prof = FrequencyProfile(np.array([max_frequency(g.generator) for g in prob.circuit.gates]), w, eff, {}, "maximal-only")
    return BoundReport(
        theorem="correlated",
        center=center,
        indices=[p],
        signed_curvatures=np.array([signed[p]]),
        a_terms=np.array([a]),
        beta_terms=np.array([beta]),
        r_patch=math.sqrt(r2),
        limiting_index=p,
        norm_observable=norm_o,
        gamma=gamma,
        profile=prof,
    )


def bound_report(problem: LossProblem, center: Sequence[float] | None = None) -> BoundReport:
    """Uncorrelated bound when it applies, otherwise the correlated bound."""
    try:
        return r_patch_uncorrelated(problem, center)
    except TemporalCorrelationError:
        return r_patch_correlated(problem, center)


# ---------------------------------------------------------------------------
# Region of attraction around a minimum
# ---------------------------------------------------------------------------
@dataclass
class RoAReport:
    gap: float
    epsilon: float
    generator_variance: float
    generator_norm: float
    norm_observable: float
    epsilon_threshold: float
    condition_ok: bool
    margin: float
    r_patch_star: float
    lb_coefficient: float
    variance_lb: float
    r_patch_safe: float
    variance_lb_safe: float
    curvature: float
    r_patch_correlated: float | None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: (v if not isinstance(v, float) or math.isfinite(v) else str(v)) for k, v in self.__dict__.items()}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def region_of_attraction(problem: LossProblem, theta_star: Sequence[float]) -> RoAReport:
    """Certified region around a near-ground-state minimum ``theta_star``.

    ``margin = gap * Var_rho(H) - |eps| ||H||^2 (11 gap + 6 ||O||)`` and
    ``r*^2 = 9 margin^2 / (128 ||O||^2 w_m^4 sum_{j != m} w_j^2)`` with
    lower bound ``margin^2 r*^4 / 18``.  The ``safe`` radius adds the term
    ``64 ||O||^2 w_m^6`` to the denominator, which keeps it inside the
    correlated-parameter radius for every curvature consistent with the
    margin.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    circ = problem.circuit
    spec = spectrum(problem.observable)
    if spec.ground_degenerate:
        raise AssumptionViolated("assumption violated: the observable's ground state is degenerate")
    last = circ.gates[-1]
    if len(circ.positions_of[last.param]) != 1:
        raise AssumptionViolated("assumption violated: the state-adjacent parameter is shared with other gates")
    notes: list[str] = []
    h = last.generator.dense()
    rho = problem.density_matrix
    var_h = float(np.trace(rho @ h @ h).real - np.trace(rho @ h).real ** 2)
    norm_h = spectral_norm(h, hermitian=True)
    norm_o = spectral_norm(problem.observable)
    gap = spec.gap
    evals, vecs = problem.observable.eigh
    ground = vecs[:, 0]
    u = circuit_unitary(circ, theta_star)
    fidelity = float(np.real(ground.conj() @ u @ rho @ u.conj().T @ ground))
    eps = math.sqrt(max(0.0, 1.0 - fidelity))
    threshold = gap * var_h / ((6 * norm_o + 11 * gap) * norm_h**2) if norm_h > 0 else 0.0
    ok = eps < threshold
    margin = gap * var_h - eps * norm_h**2 * (11 * gap + 6 * norm_o)
    w = np.zeros(circ.n_params)
    for g in circ.gates:
        w[g.param] += max_frequency(g.generator)
    wm = w[last.param]
    others = float(np.sum(w**2) - wm**2)
    coeff = margin**2 / 18
    if ok:
        denom = 128 * norm_o**2 * wm**4 * others
        if denom > 0:
            r_star = math.sqrt(9 * margin**2 / denom)
        else:
            r_star = math.inf
            notes.append("single parameter: the certified radius formula is unbounded")
        r_safe = math.sqrt(9 * margin**2 / (denom + 64 * norm_o**2 * wm**6))
    else:
        r_star = r_safe = 0.0
        notes.append("infidelity condition fails: no certified region")
    c = abs(loss_derivative(problem, theta_star, {last.param: 2}))
    try:
        r_corr = r_patch_correlated(problem, theta_star, last.param).r_patch
    except NoCertifiedPatch:
        r_corr = None
    return RoAReport(
        gap=gap,
        epsilon=eps,
        generator_variance=var_h,
        generator_norm=norm_h,
        norm_observable=norm_o,
        epsilon_threshold=threshold,
        condition_ok=ok,
        margin=margin,
        r_patch_star=r_star,
        lb_coefficient=coeff,
        variance_lb=coeff * r_star**4 if math.isfinite(r_star) else math.inf,
        r_patch_safe=r_safe,
        variance_lb_safe=coeff * r_safe**4,
        curvature=c,
        r_patch_correlated=r_corr,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# Upper bound via patch inclusion
# ---------------------------------------------------------------------------
@dataclass
class UpperBoundReport:
    r_full: float
    r: float
    n_params: int
    lhs: float
    rhs: float
    holds: bool
    method: str
    tolerance: float
    mean_full: float
    zero_mean_ok: bool
    per_qubit_factor: float | None = None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _gauss_moments(problem: LossProblem, center: np.ndarray, r: float, order: int) -> tuple[float, float]:
    x, w = np.polynomial.legendre.leggauss(order)
    m = problem.n_params
    pts = np.array(list(product(x, repeat=m)))
    wts = np.prod(np.array(list(product(w, repeat=m))), axis=1) / 2**m
    vals = evaluate_batch(problem, center + r * pts)
    return float(wts @ vals), float(wts @ (vals * vals))


def patch_moments_quadrature(
    problem: LossProblem, center: Sequence[float], r: float, tol: float = 1e-12, max_order: int = 160
) -> tuple[float, float]:
    """Mean and second moment over ``HC(center, r)`` by tensor Gauss-Legendre.

    The order doubles until both moments change by less than ``tol``.
    """
    if problem.n_params > 3:
        raise ValueError("quadrature is limited to at most three parameters")
    center = np.asarray(center, dtype=float)
    order = 12
    prev = _gauss_moments(problem, center, r, order)
    while order < max_order:
        order = min(2 * order, max_order)
        cur = _gauss_moments(problem, center, r, order)
        if max(abs(cur[0] - prev[0]), abs(cur[1] - prev[1])) < tol:
            return cur
        prev = cur
    return prev


def upper_bound_check(
    problem: LossProblem,
    center: Sequence[float],
    r_full: float,
    r: float,
    n_samples: int = 4000,
    seed: int = 0,
    params_per_qubit: float | None = None,
    full_variance_base: float | None = None,
) -> UpperBoundReport:
    """Check ``(r_full/r)^m E_full[L^2] >= E_r[L^2]``.

    Uses quadrature for ``m <= 3`` and Monte Carlo with a three-sigma slack
    otherwise.  If the full-patch mean is not zero within its uncertainty,
    the check is run on the centred loss and the report says so.  When
    ``params_per_qubit = c`` and ``full_variance_base = b`` are given, the
    report includes ``(r_full/r)^c / b``: the restricted variance decays at
    least as fast as this factor to the power ``n`` whenever it is below 1.
    """
    if not 0 < r <= r_full:
        raise ValueError("need 0 < r <= r_full")
    center = np.asarray(center, dtype=float)
    m = problem.n_params
    ratio = (r_full / r) ** m
    notes: list[str] = []
    if m <= 3:
        mean_full, _ = patch_moments_quadrature(problem, center, r_full)
        scale = max(1.0, spectral_norm(problem.observable))
        zero_ok = abs(mean_full) <= 1e-8 * scale
        shift = 0.0 if zero_ok else mean_full
        if not zero_ok:
            notes.append("zero-mean assumption unmet: checked on the centred loss")
        mf, sf = patch_moments_quadrature(problem, center, r_full)
        mr, sr = patch_moments_quadrature(problem, center, r)
        full2 = sf - 2 * shift * mf + shift * shift
        part2 = sr - 2 * shift * mr + shift * shift
        lhs, rhs, tol, method = ratio * full2, part2, 1e-8, "quadrature"
    else:
        vals = evaluate_batch(problem, center + r_full * sample_offsets(seed, 0, range(n_samples), m))
        mean_full = float(vals.mean())
        se_mean = float(vals.std(ddof=1) / math.sqrt(n_samples))
        zero_ok = abs(mean_full) <= 3 * se_mean
        shift = 0.0 if zero_ok else mean_full
        if not zero_ok:
            notes.append("zero-mean assumption unmet: checked on the centred loss")
        sq_full = (vals - shift) ** 2
        full2, se_full = float(sq_full.mean()), float(sq_full.std(ddof=1) / math.sqrt(n_samples))
        part2, se_part = estimate_second_moment(problem, PatchSpec(center, r), n_samples, seed, 1, shift)
        lhs, rhs, method = ratio * full2, part2, "monte-carlo"
        tol = 3 * math.hypot(ratio * se_full, se_part)
    factor = None
    if params_per_qubit is not None and full_variance_base is not None:
        factor = (r_full / r) ** params_per_qubit / full_variance_base
    return UpperBoundReport(
        r_full=r_full,
        r=r,
        n_params=m,
        lhs=lhs,
        rhs=rhs,
        holds=bool(lhs >= rhs - tol),
        method=method,
        tolerance=tol,
        mean_full=mean_full,
        zero_mean_ok=zero_ok,
        per_qubit_factor=factor,
        notes=notes,
    )

