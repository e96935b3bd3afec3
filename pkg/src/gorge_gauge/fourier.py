"""Exact multi-dimensional Fourier expansion of a circuit loss.

Writing each generator as ``H = sum_j lambda_j P_j`` (distinct eigenvalues,
spectral projectors ``P_j``), one gate maps a state component ``rho`` to
``sum_{j,k} exp(-i theta (lambda_j - lambda_k)) P_j rho P_k``.  Tracking the
frequency each parameter picks up along the way and tracing against the
observable at the end gives ``L(theta) = sum_w a_w exp(-i theta . w)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .circuit import LossProblem
from .operators import OperatorSum

FREQ_TOL = 1e-9
COEFF_TOL = 1e-12
DEFAULT_TERM_LIMIT = 100_000


class SpectrumTooLarge(ValueError):
    """The frequency grid exceeds the configured limit."""


def _dedup(values: np.ndarray, tol: float = FREQ_TOL) -> np.ndarray:
    values = np.sort(np.asarray(values, dtype=float))
    out: list[float] = []
    for v in values:
        if not out or v - out[-1] > tol:
            out.append(float(v))
    return np.array(out)


def _snap(x: float) -> int:
    return int(round(x / FREQ_TOL))


def eigen_groups(h: OperatorSum) -> list[tuple[float, np.ndarray]]:
    """Distinct eigenvalues of ``h`` with orthonormal bases of their eigenspaces."""
    evals, vecs = h.eigh
    groups: list[tuple[float, list[int]]] = []
    for i, e in enumerate(evals):
        if groups and e - groups[-1][0] <= FREQ_TOL * max(1.0, abs(e)):
            groups[-1][1].append(i)
        else:
            groups.append((float(e), [i]))
    return [(float(np.mean(evals[idx])), vecs[:, idx]) for _, idx in groups]


@dataclass(frozen=True)
class FrequencySpectrum:
    per_gate: tuple[np.ndarray, ...]
    per_parameter: tuple[np.ndarray, ...]

    @property
    def grid_size(self) -> int:
        return math.prod(len(s) for s in self.per_parameter)


def frequency_spectrum(problem: LossProblem) -> FrequencySpectrum:
    """Eigenvalue-difference sets per gate and their Minkowski sums per parameter."""
    circ = problem.circuit
    per_gate = []
    for g in circ.gates:
        lam = np.array([e for e, _ in eigen_groups(g.generator)])
        per_gate.append(_dedup((lam[:, None] - lam[None, :]).ravel()))
    per_param = []
    for positions in circ.positions_of:
        acc = np.array([0.0])
        for pos in positions:
            acc = _dedup((acc[:, None] + per_gate[pos][None, :]).ravel())
        per_param.append(acc)
    return FrequencySpectrum(tuple(per_gate), tuple(per_param))


@dataclass(frozen=True)
class FourierTable:
    """``L(theta) = sum_w a_w exp(-i theta . w)``."""

    frequencies: np.ndarray  # (K, m)
    coefficients: np.ndarray  # (K,)

    def evaluate(self, theta: Sequence[float] | np.ndarray) -> np.ndarray | float:
        theta = np.asarray(theta, dtype=float)
        phase = np.exp(-1j * (np.atleast_2d(theta) @ self.frequencies.T))
        vals = phase @ self.coefficients
        return float(vals[0].real) if theta.ndim == 1 else vals.real

    def reality_residual(self) -> float:
        """``max |a_{-w} - conj(a_w)|`` over the table."""
        index = {tuple(_snap(x) for x in w): a for w, a in zip(self.frequencies, self.coefficients)}
        worst = 0.0
        for key, a in index.items():
            partner = index.get(tuple(-k for k in key), 0.0)
            worst = max(worst, abs(partner - np.conj(a)))
        return float(worst)

    def as_list(self) -> list[dict]:
        return [
            {"omega": [float(x) for x in w], "re": float(a.real), "im": float(a.imag)}
            for w, a in zip(self.frequencies, self.coefficients)
        ]

    def to_json(self) -> str:
        return json.dumps(self.as_list())


def fourier_coefficients(problem: LossProblem, limit: int = DEFAULT_TERM_LIMIT) -> FourierTable:
    """Exact Fourier coefficients by propagating frequency-labelled state pieces."""
    spec = frequency_spectrum(problem)
    if spec.grid_size > limit:
        raise SpectrumTooLarge(
            f"frequency grid of {spec.grid_size} points exceeds the limit of {limit}"
        )
    circ = problem.circuit
    m = circ.n_params
    # Pieces are keyed by snapped frequencies; the exact frequency vector of
    # the first contribution is kept alongside for reconstruction.
    pieces: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {
        (0,) * m: (np.zeros(m), problem.density_matrix.astype(complex))
    }
    for g in reversed(circ.gates):
        groups = eigen_groups(g.generator)
        projectors = [(lam, vecs @ vecs.conj().T) for lam, vecs in groups]
        fixed = g.fixed_dense() if (g.fixed is not None or g.offset) else None
        nxt: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}
        for omega, rho in pieces.values():
            for lam_j, pj in projectors:
                left = pj @ rho
                for lam_k, pk in projectors:
                    block = left @ pk
                    if not np.any(np.abs(block) > 1e-15):
                        continue
                    if fixed is not None:
                        block = fixed @ block @ fixed.conj().T
                    w = omega.copy()
                    w[g.param] += lam_j - lam_k
                    key = tuple(_snap(x) for x in w)
                    if key in nxt:
                        nxt[key] = (nxt[key][0], nxt[key][1] + block)
                    else:
                        nxt[key] = (w, block)
        pieces = nxt
    obs = problem.observable.dense()
    freqs, coeffs = [], []
    for key in sorted(pieces):
        omega, rho = pieces[key]
        a = complex(np.sum(obs.T * rho))  # Tr[O rho]
        if abs(a) > COEFF_TOL:
            freqs.append(omega)
            coeffs.append(a)
    if not freqs:
        freqs, coeffs = [np.zeros(m)], [0.0j]
    return FourierTable(np.array(freqs, dtype=float), np.array(coeffs, dtype=complex))


def dominant_frequency_weight(table: FourierTable, h: int) -> float:
    """``sum_w w_h^2 |a_w|``: a diagnostic companion to the effective frequency."""
    return float(np.sum(table.frequencies[:, h] ** 2 * np.abs(table.coefficients)))
