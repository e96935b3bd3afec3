"""Parameterised circuits, loss evaluation and analytic derivatives.

Gate index 0 is the gate adjacent to the observable.  The circuit unitary is

    U(theta) = V_0 exp(-i theta_{s_0} H_0) V_1 exp(-i theta_{s_1} H_1) ...

so the last gate in the list is the first one to act on the initial state.
User-facing lists written in state-first order go through
:func:`observable_first` once.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from functools import cached_property
from itertools import product
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .operators import OperatorSum, _check_dense_size, matrix_exponential

IMAG_TOL = 1e-10
_BATCH_BYTES = 1 << 17


# ---------------------------------------------------------------------------
# Fixed (non-parameterised) unitaries
# ---------------------------------------------------------------------------
class FixedUnitary(Protocol):
    n_qubits: int

    def apply(self, psi: np.ndarray) -> np.ndarray: ...

    def dense(self) -> np.ndarray: ...

    def to_json(self) -> object: ...


@dataclass(frozen=True, eq=False)
class DiagonalUnitary:
    """A unitary that is diagonal in the computational basis (e.g. CZ layers)."""

    phases: np.ndarray
    n_qubits: int
    label: str = ""

    @classmethod
    def cz_pairs(cls, n_qubits: int, pairs: Iterable[tuple[int, int]]) -> DiagonalUnitary:
        """Product of CZ gates on 0-based qubit pairs."""
        idx = np.arange(1 << n_qubits, dtype=np.int64)
        sign = np.ones(1 << n_qubits)
        pairs = list(pairs)
        for a, b in pairs:
            if a == b:
                raise ValueError("CZ needs two distinct qubits")
            both = ((idx >> (n_qubits - 1 - a)) & 1) & ((idx >> (n_qubits - 1 - b)) & 1)
            sign = sign * (1 - 2 * both)
        label = " ".join(f"CZ({a + 1},{b + 1})" for a, b in pairs)
        return cls(sign.astype(complex), n_qubits, label)

    @classmethod
    def cz_ring(cls, n_qubits: int) -> DiagonalUnitary:
        """CZ(i, i+1) for all i with periodic closure; a single CZ when n = 2."""
        if n_qubits < 2:
            raise ValueError("a CZ ring needs at least two qubits")
        if n_qubits == 2:
            return cls.cz_pairs(2, [(0, 1)])
        return cls.cz_pairs(n_qubits, [(i, (i + 1) % n_qubits) for i in range(n_qubits)])

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return psi * self.phases

    def dense(self) -> np.ndarray:
        return np.diag(self.phases)

    def to_json(self) -> object:
        if self.label:
            return self.label
        return {"diagonal": [[float(p.real), float(p.imag)] for p in self.phases]}


@dataclass(frozen=True, eq=False)
class PauliExponential:
    """``exp(-i G)`` for a Hermitian Pauli sum ``G``."""

    generator: OperatorSum

    @property
    def n_qubits(self) -> int:
        return self.generator.n_qubits

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return apply_exponential(self.generator, psi, 1.0)

    def dense(self) -> np.ndarray:
        return matrix_exponential(self.generator, 1.0)

    def to_json(self) -> object:
        return self.generator.to_list()


@dataclass(frozen=True, eq=False)
class DenseUnitary:
    matrix: np.ndarray

    @property
    def n_qubits(self) -> int:
        return self.matrix.shape[0].bit_length() - 1

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return psi @ self.matrix.T

    def dense(self) -> np.ndarray:
        return self.matrix

    def to_json(self) -> object:
        return {"dense": [[[float(z.real), float(z.imag)] for z in row] for row in self.matrix]}


_CZ_PATTERN = re.compile(r"CZ\(\s*(\d+)\s*,\s*(\d+)\s*\)")


def parse_fixed_unitary(spec: object, n_qubits: int) -> FixedUnitary | None:
    """Decode the ``v`` field of a serialised gate.

    Accepted forms: ``null``; a string of ``CZ(i,j)`` literals (1-based qubits);
    a Pauli sum ``[["coeff", "XZ.."], ...]`` interpreted as the generator ``G``
    of ``exp(-i G)``; ``{"dense": [[[re, im], ...], ...]}``;
    ``{"diagonal": [[re, im], ...]}``.
    """
    if spec is None:
        return None
    if isinstance(spec, str):
        pairs = [(int(a) - 1, int(b) - 1) for a, b in _CZ_PATTERN.findall(spec)]
        if not pairs or _CZ_PATTERN.sub("", spec).strip(" ;,"):
            raise ValueError(f"cannot parse fixed unitary {spec!r}")
        return DiagonalUnitary.cz_pairs(n_qubits, pairs)
    if isinstance(spec, Mapping):
        if "dense" in spec:
            m = np.array(spec["dense"], dtype=float)
            return DenseUnitary(m[..., 0] + 1j * m[..., 1])
        if "diagonal" in spec:
            m = np.array(spec["diagonal"], dtype=float)
            return DiagonalUnitary(m[:, 0] + 1j * m[:, 1], n_qubits)
        raise ValueError(f"unknown fixed unitary keys {sorted(spec)}")
    return PauliExponential(OperatorSum.from_list(spec, n_qubits).real_coefficients())


# ---------------------------------------------------------------------------
# Generator exponentials on batches of statevectors
# ---------------------------------------------------------------------------
def _flip_qubits(psi: np.ndarray, n: int, qubits: Sequence[int]) -> np.ndarray:
    """``psi`` with the listed qubits bit-flipped (qubit 0 is the leading bit)."""
    if not qubits:
        return psi
    lead = psi.shape[:-1]
    view = psi.reshape(lead + (2,) * n)
    return np.flip(view, axis=tuple(len(lead) + q for q in qubits)).reshape(psi.shape)


def _single_qubit_exponential(h: OperatorSum, q: int, psi: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``exp(-i t H)`` for ``H = a_0 I + a_x X + a_y Y + a_z Z`` on qubit ``q``."""
    a = {"I": 0.0, "X": 0.0, "Y": 0.0, "Z": 0.0}
    for term in h.terms:
        letter = term.letters[q]
        a[letter] += term.coefficient.real
    norm = math.sqrt(a["X"] ** 2 + a["Y"] ** 2 + a["Z"] ** 2)
    nx, ny, nz = (a[k] / norm for k in "XYZ") if norm else (0.0, 0.0, 0.0)
    tt = t[..., None, None] if t.ndim else t
    c, s = np.cos(tt * norm), np.sin(tt * norm)
    glob = np.exp(-1j * tt * a["I"])
    u00 = glob * (c - 1j * s * nz)
    u11 = glob * (c + 1j * s * nz)
    u01 = glob * (-s * ny - 1j * s * nx)
    u10 = glob * (s * ny - 1j * s * nx)
    n = h.n_qubits
    lead = psi.shape[:-1]
    view = psi.reshape(lead + (1 << q, 2, 1 << (n - q - 1)))
    lo, hi = view[..., 0, :], view[..., 1, :]
    out = np.empty(view.shape, dtype=complex)
    out[..., 0, :] = u00 * lo + u01 * hi
    out[..., 1, :] = u10 * lo + u11 * hi
    return out.reshape(psi.shape)


def apply_exponential(h: OperatorSum, psi: np.ndarray, t: np.ndarray | float) -> np.ndarray:
    """Apply ``exp(-i t H)`` along the last axis of ``psi``.

    ``t`` is a scalar or has one entry per row of a 2-D ``psi``.  Diagonal
    generators use a phase vector, sums of commuting Pauli strings use a
    product of exact Pauli rotations, and anything else falls back to the
    cached dense eigendecomposition.
    """
    t = np.asarray(t, dtype=float)
    col = t[..., None] if t.ndim else t
    if not h.terms:
        return psi
    qubits = {k for term in h.terms for k in term.support}
    if len(qubits) == 1:
        return _single_qubit_exponential(h, qubits.pop(), psi, t)
    if h.is_diagonal:
        return psi * np.exp(-1j * col * h.diagonal.real)
    if h.terms_commute:
        out = psi
        for term, (perm, phase) in zip(h.terms, h._actions):
            a = term.coefficient.real
            unit_phase = phase / term.coefficient
            flipped = _flip_qubits(out, h.n_qubits, [k for k, c in enumerate(term.letters) if c in "XY"])
            out = np.cos(a * col) * out - 1j * np.sin(a * col) * (unit_phase * flipped)
        return out
    evals, vecs = h.eigh
    coeffs = psi @ vecs.conj()
    coeffs = coeffs * np.exp(-1j * col * evals)
    return coeffs @ vecs.T


# ---------------------------------------------------------------------------
# Circuit data model
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Gate:
    """``V exp(-i (offset + theta_param) H)``; ``param`` is 0-based."""

    generator: OperatorSum
    param: int
    fixed: FixedUnitary | None = None
    offset: float = 0.0

    def __post_init__(self) -> None:
        if not self.generator.is_hermitian:
            raise ValueError("gate generators must be Hermitian")
        if self.param < 0:
            raise ValueError("parameter indices are non-negative")

    @property
    def n_qubits(self) -> int:
        return self.generator.n_qubits

    def apply(self, psi: np.ndarray, angle: np.ndarray | float) -> np.ndarray:
        """Apply the exponential and then the fixed unitary."""
        out = apply_exponential(self.generator, psi, np.asarray(angle) + self.offset)
        return self.fixed.apply(out) if self.fixed is not None else out

    def fixed_dense(self) -> np.ndarray:
        """Dense ``V exp(-i offset H)``: the fixed part with the centre folded in."""
        d = 1 << self.n_qubits
        v = self.fixed.dense() if self.fixed is not None else np.eye(d, dtype=complex)
        if self.offset == 0.0:
            return v
        return v @ matrix_exponential(self.generator, self.offset)


@dataclass(frozen=True, eq=False)
class ParameterizedCircuit:
    gates: tuple[Gate, ...]
    n_qubits: int
    n_params: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "gates", tuple(self.gates))
        if not self.gates:
            raise ValueError("a circuit needs at least one gate")
        for g in self.gates:
            if g.n_qubits != self.n_qubits:
                raise ValueError("gate register size differs from the circuit")
            if g.fixed is not None and g.fixed.n_qubits != self.n_qubits:
                raise ValueError("fixed unitary register size differs from the circuit")
            if g.param >= self.n_params:
                raise ValueError(f"parameter index {g.param + 1} exceeds n_params={self.n_params}")
        used = {g.param for g in self.gates}
        if used != set(range(self.n_params)):
            missing = sorted(set(range(self.n_params)) - used)
            raise ValueError(f"correlation map is not surjective; unused parameters {[m + 1 for m in missing]}")

    @property
    def n_generators(self) -> int:
        return len(self.gates)

    @property
    def is_uncorrelated(self) -> bool:
        return self.n_params == self.n_generators

    @cached_property
    def positions_of(self) -> tuple[tuple[int, ...], ...]:
        """Gate positions carrying each parameter (the preimage of S)."""
        out: list[list[int]] = [[] for _ in range(self.n_params)]
        for i, g in enumerate(self.gates):
            out[g.param].append(i)
        return tuple(tuple(p) for p in out)

    def with_offsets(self, center: np.ndarray) -> ParameterizedCircuit:
        """Fold the centre ``phi`` into the gates (``V -> V exp(-i phi H)``)."""
        center = np.asarray(center, dtype=float)
        if center.shape != (self.n_params,):
            raise ValueError(f"centre must have length {self.n_params}")
        gates = tuple(replace(g, offset=g.offset + float(center[g.param])) for g in self.gates)
        return ParameterizedCircuit(gates, self.n_qubits, self.n_params)

    # ----- serialisation ------------------------------------------------
    def to_json(self) -> dict:
        if any(g.offset for g in self.gates):
            raise ValueError("serialise the circuit before folding a centre into it")
        return {
            "n_qubits": self.n_qubits,
            "params": self.n_params,
            "gates": [
                {
                    "v": None if g.fixed is None else g.fixed.to_json(),
                    "h": g.generator.to_list(),
                    "s": g.param + 1,
                }
                for g in self.gates
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping | str) -> ParameterizedCircuit:
        if isinstance(data, str):
            data = json.loads(data)
        n = int(data["n_qubits"])
        gates = [
            Gate(
                OperatorSum.from_list(g["h"], n).real_coefficients(),
                int(g["s"]) - 1,
                parse_fixed_unitary(g.get("v"), n),
            )
            for g in data["gates"]
        ]
        return cls(tuple(gates), n, int(data["params"]))


def observable_first(gates_state_first: Sequence[Gate]) -> tuple[Gate, ...]:
    """Convert a state-first gate list into the internal observable-first order.

    In a state-first list each gate's fixed unitary acts *after* its
    exponential, which is exactly the internal gate semantics, so only the
    order is reversed.
    """
    return tuple(reversed(tuple(gates_state_first)))


@dataclass(frozen=True, eq=False)
class LossProblem:
    """``L(theta) = Tr[U(theta) rho U(theta)^dagger O]``.

    ``state`` is a statevector or a density matrix.  ``local`` declares
    geometric locality of the observable and the observable-adjacent generator
    (used by the tightened remainder constant in the bounds module).
    """

    circuit: ParameterizedCircuit
    state: np.ndarray
    observable: OperatorSum
    local: bool = False

    def __post_init__(self) -> None:
        d = 1 << self.circuit.n_qubits
        st = np.asarray(self.state, dtype=complex)
        object.__setattr__(self, "state", st)
        if self.observable.n_qubits != self.circuit.n_qubits:
            raise ValueError("observable register differs from the circuit")
        if not self.observable.is_hermitian:
            raise ValueError("observable must be Hermitian")
        if st.shape == (d,):
            if abs(np.vdot(st, st).real - 1) > 1e-10:
                raise ValueError("statevector is not normalised")
        elif st.shape == (d, d):
            if not np.allclose(st, st.conj().T, atol=1e-10):
                raise ValueError("density matrix is not Hermitian")
            if abs(np.trace(st).real - 1) > 1e-10:
                raise ValueError("density matrix does not have unit trace")
            if np.linalg.eigvalsh(st)[0] < -1e-10:
                raise ValueError("density matrix is not positive semidefinite")
        else:
            raise ValueError(f"state must have shape ({d},) or ({d}, {d})")

    @property
    def n_params(self) -> int:
        return self.circuit.n_params

    @property
    def n_qubits(self) -> int:
        return self.circuit.n_qubits

    @cached_property
    def ensemble(self) -> tuple[np.ndarray, np.ndarray]:
        """Weights and pure components of the initial state."""
        if self.state.ndim == 1:
            return np.ones(1), self.state[None, :]
        w, v = np.linalg.eigh(self.state)
        keep = w > 1e-14
        return w[keep], v[:, keep].T.copy()

    @cached_property
    def density_matrix(self) -> np.ndarray:
        if self.state.ndim == 1:
            return np.outer(self.state, self.state.conj())
        return self.state

    @cached_property
    def observable_sparse(self):
        return self.observable.sparse()

    def recentered(self, center: np.ndarray) -> LossProblem:
        return replace(self, circuit=self.circuit.with_offsets(center))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------
def _evolve(circuit: ParameterizedCircuit, psi: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Apply ``U(theta_b)`` to row ``b`` of ``psi``; ``thetas`` has shape (B, m)."""
    for g in reversed(circuit.gates):
        psi = g.apply(psi, thetas[:, g.param])
    return psi


def _expectation(problem: LossProblem, psi: np.ndarray) -> np.ndarray:
    o_psi = (problem.observable_sparse @ psi.T).T
    return np.einsum("bd,bd->b", psi.conj(), o_psi)


def evaluate_batch(problem: LossProblem, thetas: np.ndarray) -> np.ndarray:
    """Loss values for each row of ``thetas`` (shape ``(B, m)``)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[1] != problem.n_params:
        raise ValueError(f"expected {problem.n_params} parameters, got {thetas.shape[1]}")
    d = 1 << problem.n_qubits
    weights, comps = problem.ensemble
    chunk = max(1, _BATCH_BYTES // (16 * d))
    out = np.empty(thetas.shape[0])
    for start in range(0, thetas.shape[0], chunk):
        th = thetas[start : start + chunk]
        acc = np.zeros(th.shape[0], dtype=complex)
        for w, v in zip(weights, comps):
            psi = np.broadcast_to(v, (th.shape[0], d)).astype(complex)
            acc += w * _expectation(problem, _evolve(problem.circuit, psi, th))
        scale = max(1.0, float(np.max(np.abs(acc.real), initial=0.0)))
        if np.max(np.abs(acc.imag), initial=0.0) > IMAG_TOL * scale:
            raise FloatingPointError("loss has a non-negligible imaginary part")
        out[start : start + chunk] = acc.real
    return out


def evaluate_loss(problem: LossProblem, theta: Sequence[float]) -> float:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.n_params,):
        raise ValueError(f"expected {problem.n_params} parameters, got shape {theta.shape}")
    return float(evaluate_batch(problem, theta[None, :])[0])


def circuit_unitary(circuit: ParameterizedCircuit, theta: Sequence[float]) -> np.ndarray:
    _check_dense_size(circuit.n_qubits, None)
    d = 1 << circuit.n_qubits
    theta = np.asarray(theta, dtype=float)
    # Rows of the batch are the basis vectors; the result rows are U e_j.
    rows = _evolve(circuit, np.eye(d, dtype=complex), np.broadcast_to(theta, (d, circuit.n_params)))
    return rows.T


def backprop_observable(problem: LossProblem, theta: Sequence[float]) -> np.ndarray:
    """``U(theta)^dagger O U(theta)`` as a dense matrix."""
    u = circuit_unitary(problem.circuit, theta)
    return u.conj().T @ problem.observable.dense() @ u


# ---------------------------------------------------------------------------
# Analytic derivatives
# ---------------------------------------------------------------------------
def _derivative_states(
    problem: LossProblem, theta: np.ndarray, orders: Mapping[int, int], psi: np.ndarray
) -> dict[tuple[int, ...], np.ndarray]:
    """Return ``{beta: d^beta U psi}`` for every multi-index ``beta <= orders``.

    The product rule distributes ``k`` derivatives of a parameter over the
    gates carrying it; each gate with ``k`` derivatives contributes
    ``(-i H)^k / k!`` and the multinomial factor is restored at the end.
    """
    params = sorted(orders)
    top = tuple(orders[p] for p in params)
    slot = {p: i for i, p in enumerate(params)}
    table: dict[tuple[int, ...], np.ndarray] = {top: psi.astype(complex)}
    for g in reversed(problem.circuit.gates):
        angle = theta[g.param] + g.offset
        new: dict[tuple[int, ...], np.ndarray] = {}
        for rem, vec in table.items():
            vec = apply_exponential(g.generator, vec, angle)
            if g.param in slot and rem[slot[g.param]] > 0:
                i = slot[g.param]
                term = vec
                for k in range(rem[i] + 1):
                    if k:
                        term = -1j * g.generator.apply(term) / k
                    key = rem[:i] + (rem[i] - k,) + rem[i + 1 :]
                    new[key] = new[key] + term if key in new else term
            else:
                new[rem] = new[rem] + vec if rem in new else vec
        if g.fixed is not None:
            new = {k: g.fixed.apply(v) for k, v in new.items()}
        table = new
    out = {}
    for rem, vec in table.items():
        beta = tuple(t - r for t, r in zip(top, rem))
        out[beta] = vec * math.prod(math.factorial(b) for b in beta)
    return out


def loss_derivative(problem: LossProblem, theta: Sequence[float], orders: Mapping[int, int]) -> float:
    """Mixed partial derivative ``prod_p d^{orders[p]} / d theta_p`` of the loss."""
    theta = np.asarray(theta, dtype=float)
    orders = {int(p): int(k) for p, k in orders.items() if k}
    for p in orders:
        if not 0 <= p < problem.n_params:
            raise IndexError(f"parameter index {p} out of range")
    if not orders:
        return evaluate_loss(problem, theta)
    params = sorted(orders)
    alpha = tuple(orders[p] for p in params)
    weights, comps = problem.ensemble
    total = 0.0 + 0.0j
    for w, v in zip(weights, comps):
        states = _derivative_states(problem, theta, orders, v)
        o_states = {b: problem.observable.apply(s) for b, s in states.items()}
        for beta in product(*(range(a + 1) for a in alpha)):
            rest = tuple(a - b for a, b in zip(alpha, beta))
            if beta not in states or rest not in states:
                continue
            coeff = math.prod(math.comb(a, b) for a, b in zip(alpha, beta))
            total += w * coeff * np.vdot(states[beta], o_states[rest])
    return float(total.real)


def second_derivative(problem: LossProblem, theta: Sequence[float], p: int) -> float:
    """Signed ``d^2 L / d theta_p^2`` (0-based ``p``)."""
    return loss_derivative(problem, theta, {p: 2})


def mixed_fourth_derivative(problem: LossProblem, theta: Sequence[float], p: int, q: int) -> float:
    """``d^4 L / d theta_p^2 d theta_q^2``; equals the fourth derivative when ``p == q``."""
    orders = {p: 4} if p == q else {p: 2, q: 2}
    return loss_derivative(problem, theta, orders)


def fd_second_derivative(
    problem: LossProblem, theta: Sequence[float], p: int, h: float = 1e-3, richardson: bool = True
) -> float:
    """Central finite difference, optionally with one Richardson level."""
    if h <= 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=float)
    e = np.zeros_like(theta)
    e[p] = 1.0

    def central(step: float) -> float:
        vals = evaluate_batch(problem, np.stack([theta + step * e, theta, theta - step * e]))
        return (vals[0] - 2 * vals[1] + vals[2]) / step**2

    if not richardson:
        return central(h)
    return (4 * central(h / 2) - central(h)) / 3


def fd_mixed_fourth_derivative(
    problem: LossProblem, theta: Sequence[float], p: int, q: int, h: float = 2e-2, richardson: bool = True
) -> float:
    """Central finite difference for ``d^4 L / d theta_p^2 d theta_q^2``.

    The stencil error is ``O(h^2)``; one Richardson level lifts it to ``O(h^4)``.
    """
    theta = np.asarray(theta, dtype=float)
    ep = np.zeros_like(theta)
    eq = np.zeros_like(theta)
    ep[p] = 1.0
    eq[q] = 1.0

    def central(step: float) -> float:
        if p == q:
            pts = np.stack([theta + k * step * ep for k in (-2, -1, 0, 1, 2)])
            v = evaluate_batch(problem, pts)
            return float(v[0] - 4 * v[1] + 6 * v[2] - 4 * v[3] + v[4]) / step**4
        w = np.array([1.0, -2.0, 1.0])
        pts = np.stack([theta + i * step * ep + j * step * eq for i in (-1, 0, 1) for j in (-1, 0, 1)])
        v = evaluate_batch(problem, pts).reshape(3, 3)
        return float(w @ v @ w) / step**4

    if not richardson:
        return central(h)
    return (4 * central(h / 2) - central(h)) / 3