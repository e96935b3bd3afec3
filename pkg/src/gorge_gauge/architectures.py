"""Builders for the four circuit families and their states and observables.

Each builder writes its circuit in operator order (the leftmost factor is the
one adjacent to the observable), which is also the internal gate order.  A
fixed unitary that sits between two exponentials is attached to the
exponential on its state side, and a trailing fixed unitary beyond the last
exponential is absorbed into the initial state.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from itertools import combinations
from typing import Literal, Sequence, Union

import numpy as np

from .circuit import DenseUnitary, DiagonalUnitary, FixedUnitary, Gate, LossProblem, ParameterizedCircuit
from .operators import OperatorSum, PauliTerm, pauli_decompose

Family = Literal["tensor_product", "hea", "hva", "uccsd"]
FAMILIES: tuple[str, ...] = ("tensor_product", "hea", "hva", "uccsd")


@dataclass(frozen=True)
class Rotation:
    """An exponential ``exp(-i theta_param H)`` inside an operator-order listing."""

    generator: OperatorSum
    param: int


OperatorItem = Union[Rotation, FixedUnitary]


def _compose(outer: FixedUnitary | None, inner: FixedUnitary) -> FixedUnitary:
    """``outer @ inner`` for two fixed unitaries (``inner`` acts first)."""
    if outer is None:
        return inner
    if isinstance(outer, DiagonalUnitary) and isinstance(inner, DiagonalUnitary):
        return DiagonalUnitary(outer.phases * inner.phases, outer.n_qubits)
    return DenseUnitary(outer.dense() @ inner.dense())


def assemble(
    items: Sequence[OperatorItem], n_qubits: int, n_params: int, state: np.ndarray
) -> tuple[ParameterizedCircuit, np.ndarray]:
    """Turn an operator-order listing into a circuit and a (possibly rotated) state.

    A fixed unitary listed before any rotation becomes the observable-side
    ``V`` of the first gate; each later fixed unitary becomes the ``V`` of
    the next rotation; any fixed unitaries after the last rotation are
    applied to the initial state.
    """
    gates: list[Gate] = []
    pending: FixedUnitary | None = None
    for item in items:
        if isinstance(item, Rotation):
            gates.append(Gate(item.generator, item.param, pending))
            pending = None
        else:
            pending = _compose(pending, item)
    if pending is not None:
        state = np.asarray(state, dtype=complex)
        if state.ndim == 1:
            state = pending.apply(state)
        else:
            u = pending.dense()
            state = u @ state @ u.conj().T
    return ParameterizedCircuit(tuple(gates), n_qubits, n_params), state


# ---------------------------------------------------------------------------
# States and observables
# ---------------------------------------------------------------------------
def basis_state(bits: str) -> np.ndarray:
    """Computational-basis statevector; ``bits[0]`` is qubit 1."""
    psi = np.zeros(1 << len(bits), dtype=complex)
    psi[int(bits, 2)] = 1.0
    return psi


def ghz_plus_minus(n: int) -> np.ndarray:
    """``(|+>^n + |->^n) / sqrt(2)``, a +1 eigenstate of ``Z^n``."""
    plus = np.full(1 << n, 2 ** (-n / 2), dtype=complex)
    idx = np.arange(1 << n)
    parity = np.array([bin(i).count("1") & 1 for i in idx])
    minus = plus * (1 - 2 * parity)
    psi = plus + minus
    return psi / np.linalg.norm(psi)


def neel_cat(n: int) -> np.ndarray:
    """``(|0101...> + |1010...>) / sqrt(2)``."""
    a = "01" * (n // 2)
    b = "10" * (n // 2)
    return (basis_state(a) + basis_state(b)) / np.sqrt(2)


def z_string(n: int, qubits: Sequence[int]) -> OperatorSum:
    return OperatorSum.single(n, {q: "Z" for q in qubits})


def ring_bonds(n: int) -> list[tuple[int, int]]:
    """Nearest-neighbour pairs with periodic closure; a single bond for n = 2."""
    if n == 2:
        return [(0, 1)]
    return [(i, (i + 1) % n) for i in range(n)]


def two_body_sum(n: int, letter: str) -> OperatorSum:
    """``sum_i P_i P_{i+1}`` on a periodic ring."""
    return OperatorSum([PauliTerm(1.0, _letters(n, {a: letter, b: letter})) for a, b in ring_bonds(n)], n)


def heisenberg_ring(n: int) -> OperatorSum:
    return two_body_sum(n, "X") + two_body_sum(n, "Y") + two_body_sum(n, "Z")


def _letters(n: int, assign: dict[int, str]) -> str:
    chars = ["I"] * n
    for q, c in assign.items():
        chars[q] = c
    return "".join(chars)


def _single(n: int, q: int, letter: str) -> OperatorSum:
    return OperatorSum.single(n, {q: letter})


# ---------------------------------------------------------------------------
# Tensor product ansatz
# ---------------------------------------------------------------------------
def build_tensor_product(n: int, correlated: bool = False) -> LossProblem:
    """``R_x R_z R_x`` on every qubit with observable ``Z^n``.

    Observable-side order: the first ``R_x`` layer, then ``R_z``, then the
    second ``R_x`` layer, qubits in increasing order within each layer.
    Uncorrelated: one parameter per gate (``m = 3n``); correlated: a single
    shared parameter.
    """
    if n < 1:
        raise ValueError("n must be positive")
    items: list[OperatorItem] = []
    for layer, letter in enumerate("XZX"):
        for q in range(n):
            param = 0 if correlated else layer * n + q
            items.append(Rotation(_single(n, q, letter), param))
    circuit, state = assemble(items, n, 1 if correlated else 3 * n, ghz_plus_minus(n))
    return LossProblem(circuit, state, z_string(n, range(n)))


# ---------------------------------------------------------------------------
# Hardware-efficient ansatz
# ---------------------------------------------------------------------------
def build_hea(n: int, layers: int, observable: Literal["global", "local"] = "global") -> LossProblem:
    """Layers of ``R_y R_z`` on every qubit followed by a periodic CZ ring.

    Operator order per layer ``l`` (layer 1 nearest the observable):
    ``exp(-i y_1) exp(-i z_1) ... exp(-i y_n) exp(-i z_n) V_l``.  Parameters
    are numbered along that order; ``m = M = 2 n L``.
    """
    if n < 2:
        raise ValueError("the hardware-efficient ansatz needs n >= 2")
    if layers < 1:
        raise ValueError("layers must be positive")
    ring = DiagonalUnitary.cz_ring(n)
    items: list[OperatorItem] = []
    p = 0
    for _ in range(layers):
        for q in range(n):
            for letter in "YZ":
                items.append(Rotation(_single(n, q, letter), p))
                p += 1
        items.append(ring)
    circuit, state = assemble(items, n, p, basis_state("0" * n))
    if observable == "global":
        obs = z_string(n, range(n))
    elif observable == "local":
        obs = z_string(n, (0, 1))
    else:
        raise ValueError(f"unknown observable variant {observable!r}")
    return LossProblem(circuit, state, obs)


# ---------------------------------------------------------------------------
# Hamiltonian variational ansatz for the Heisenberg ring
# ---------------------------------------------------------------------------
HVA_GENERATOR_ORDER = ("X", "Y", "Z")


def build_hva_heisenberg(n: int, layers: int, trotter: bool = False) -> LossProblem:
    """Heisenberg-ring HVA on the Néel cat state with the Heisenberg observable.

    Each layer applies ``exp(-i a sum XX) exp(-i b sum YY) exp(-i c sum ZZ)``
    in operator order, so the first parameter belongs to the ``XX`` sum next
    to the observable.  Relaxed: ``m = 3L``; Trotter: ``m = 3`` shared by all
    layers.
    """
    if n < 2 or n % 2:
        raise ValueError("the HVA builder needs an even number of qubits")
    if layers < 1:
        raise ValueError("layers must be positive")
    sums = {c: two_body_sum(n, c) for c in HVA_GENERATOR_ORDER}
    items: list[OperatorItem] = []
    for layer in range(layers):
        for k, c in enumerate(HVA_GENERATOR_ORDER):
            items.append(Rotation(sums[c], k if trotter else 3 * layer + k))
    circuit, state = assemble(items, n, 3 if trotter else 3 * layers, neel_cat(n))
    return LossProblem(circuit, state, heisenberg_ring(n), local=True)


# ---------------------------------------------------------------------------
# UCCSD (Jordan-Wigner excitation generators without parity strings)
# ---------------------------------------------------------------------------
_LOWER = np.array([[0, 1], [0, 0]], dtype=complex)  # (X + iY) / 2 = |0><1|


def _ladder_product(n: int, creators: Sequence[int], annihilators: Sequence[int]) -> np.ndarray:
    """Dense ``Q_c1^dag ... Q_a1 ...`` on qubits given 0-based."""
    mats = [np.eye(2, dtype=complex) for _ in range(n)]
    for q in creators:
        mats[q] = _LOWER.conj().T @ mats[q]
    for q in annihilators:
        mats[q] = mats[q] @ _LOWER
    return reduce(np.kron, mats)


def excitation_generator(n: int, creators: Sequence[int], annihilators: Sequence[int]) -> OperatorSum:
    """Hermitian ``H = i (A - A^dag)`` for the ladder product ``A``.

    ``exp(-i theta H) = exp(theta (A - A^dag))`` is the unitary excitation
    rotation; indices are 0-based qubits.
    """
    a = _ladder_product(n, creators, annihilators)
    return pauli_decompose(1j * (a - a.conj().T)).real_coefficients()


def single_excitations(n: int) -> list[tuple[int, int]]:
    """``(p, q)`` with ``p > q`` (1-based), lexicographic in ``(p, q)``."""
    return [(p, q) for p in range(1, n + 1) for q in range(1, p)]


def double_excitations(n: int) -> list[tuple[int, int, int, int]]:
    """``(p, q, r, s)`` with ``p > q > r > s`` (1-based), lexicographic."""
    out = [tuple(sorted(c, reverse=True)) for c in combinations(range(1, n + 1), 4)]
    return sorted(out)


def uccsd_generators(n: int) -> list[tuple[tuple[int, ...], OperatorSum]]:
    """Singles then doubles, each labelled by its 1-based excitation tuple."""
    gens: list[tuple[tuple[int, ...], OperatorSum]] = []
    for p, q in single_excitations(n):
        gens.append(((p, q), excitation_generator(n, [p - 1], [q - 1])))
    for p, q, r, s in double_excitations(n):
        gens.append(((p, q, r, s), excitation_generator(n, [p - 1, q - 1], [r - 1, s - 1])))
    return gens


def build_uccsd(n: int, layers: int, trotter: bool = False) -> LossProblem:
    """UCCSD with the ZZ-ring observable on ``|1>^{n/2} |0>^{n/2}``.

    Per layer, all single excitations then all double excitations in
    operator order, so single excitations sit nearest the observable.
    """
    if n < 4 or n % 2:
        raise ValueError("the UCCSD builder needs an even n >= 4")
    if layers < 1:
        raise ValueError("layers must be positive")
    gens = uccsd_generators(n)
    k = len(gens)
    items: list[OperatorItem] = []
    for layer in range(layers):
        for j, (_, h) in enumerate(gens):
            items.append(Rotation(h, j if trotter else layer * k + j))
    state = basis_state("1" * (n // 2) + "0" * (n // 2))
    circuit, state = assemble(items, n, k if trotter else k * layers, state)
    return LossProblem(circuit, state, two_body_sum(n, "Z"))


def uccsd_parameter_labels(n: int, layers: int, trotter: bool = False) -> list[str]:
    labels = []
    names = ["".join(str(i) for i in t) if n < 10 else ",".join(map(str, t)) for t, _ in uccsd_generators(n)]
    for layer in range(1 if trotter else layers):
        labels.extend(f"{name}" if trotter else f"{name}@{layer + 1}" for name in names)
    return labels


# ---------------------------------------------------------------------------
# State-learning loss with exponentially small variance near the identity
# ---------------------------------------------------------------------------
def all_ones_projector(n: int) -> OperatorSum:
    """``|1...1><1...1| = prod_i (I - Z_i) / 2`` as a Pauli sum."""
    terms = []
    for mask in range(1 << n):
        letters = "".join("Z" if (mask >> (n - 1 - q)) & 1 else "I" for q in range(n))
        sign = -1.0 if bin(mask).count("1") % 2 else 1.0
        terms.append(PauliTerm(sign / 2**n, letters))
    return OperatorSum(terms, n)


def build_fidelity_product(n: int) -> LossProblem:
    """``L = 1 - prod_i sin^2(theta_i)``: one ``R_y`` per qubit on ``|0...0>``.

    The observable is ``1 - |1...1><1...1|``, so the loss is one minus the
    fidelity with the all-ones state.  Around the identity the variance is
    at most ``(r^4 / 5)^n`` for ``r < 1``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    items: list[OperatorItem] = [Rotation(_single(n, q, "Y"), q) for q in range(n)]
    circuit, state = assemble(items, n, n, basis_state("0" * n))
    identity = OperatorSum.single(n, "I" * n)
    return LossProblem(circuit, state, identity - all_ones_projector(n))


# ---------------------------------------------------------------------------
# Gapped product-ground-state problem for region-of-attraction studies
# ---------------------------------------------------------------------------
def tilted_field_observable(n: int, angles: Sequence[float]) -> OperatorSum:
    """``-sum_i (cos a_i Z_i + sin a_i X_i)``: gap 2, product ground state."""
    terms = []
    for q, a in enumerate(angles):
        terms.append(PauliTerm(-np.cos(a), _letters(n, {q: "Z"})))
        terms.append(PauliTerm(-np.sin(a), _letters(n, {q: "X"})))
    return OperatorSum(terms, n)


def build_roa_problem(n: int = 4, layers: int = 2, seed: int = 7) -> LossProblem:
    """Entangling ``R_z R_y`` layers whose state-side gate is an ``R_y``.

    Operator order per layer: ``V exp(-i z_1) exp(-i y_1) ... ``, with a CZ
    ring between layers.  The last gate acting on ``|0...0>`` is ``R_y`` on
    qubit ``n``, whose generator variance on the initial state is 1.
    Observable: a tilted transverse field with angles drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.3, 1.2, size=n)
    ring = DiagonalUnitary.cz_ring(n)
    items: list[OperatorItem] = []
    p = 0
    for layer in range(layers):
        if layer:
            items.append(ring)
        for q in range(n):
            for letter in "ZY":
                items.append(Rotation(_single(n, q, letter), p))
                p += 1
    circuit, state = assemble(items, n, p, basis_state("0" * n))
    return LossProblem(circuit, state, tilted_field_observable(n, angles))


# ---------------------------------------------------------------------------
# Registry for configuration-driven construction
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ArchitectureSpec:
    family: str
    n_qubits: int
    layers: int = 1
    correlated: bool = False
    observable: str = "global"

    def build(self) -> LossProblem:
        if self.family == "tensor_product":
            return build_tensor_product(self.n_qubits, self.correlated)
        if self.family == "hea":
            return build_hea(self.n_qubits, self.layers, self.observable)  # type: ignore[arg-type]
        if self.family == "hva":
            return build_hva_heisenberg(self.n_qubits, self.layers, self.correlated)
        if self.family == "uccsd":
            return build_uccsd(self.n_qubits, self.layers, self.correlated)
        if self.family == "roa":
            return build_roa_problem(self.n_qubits, self.layers)
        if self.family == "fidelity_product":
            return build_fidelity_product(self.n_qubits)
        raise ValueError(f"unknown architecture family {self.family!r}")
