"""Pauli-string algebra, dense realisations and spectral helpers.

Qubit ``k`` of an ``n``-qubit register corresponds to letter ``k`` of a Pauli
string and to bit ``n - 1 - k`` of a computational-basis index, so the first
letter is the most significant bit (the usual Kronecker ordering).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, reduce
from itertools import product
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

DENSE_QUBIT_LIMIT = 14
EIGEN_TOL = 1e-12
DEGENERACY_RTOL = 1e-9

_PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# Single-letter products: (a, b) -> (phase, letter) with a·b = phase·letter.
_PRODUCT_TABLE: dict[tuple[str, str], tuple[complex, str]] = {}
for _a in "IXYZ":
    _PRODUCT_TABLE[("I", _a)] = (1, _a)
    _PRODUCT_TABLE[(_a, "I")] = (1, _a)
    _PRODUCT_TABLE[(_a, _a)] = (1, "I")
for _a, _b, _c in (("X", "Y", "Z"), ("Y", "Z", "X"), ("Z", "X", "Y")):
    _PRODUCT_TABLE[(_a, _b)] = (1j, _c)
    _PRODUCT_TABLE[(_b, _a)] = (-1j, _c)


class RegisterTooLargeError(ValueError):
    """Raised when a dense realisation would exceed the configured qubit limit."""


def _check_dense_size(n_qubits: int, limit: int | None) -> None:
    limit = DENSE_QUBIT_LIMIT if limit is None else limit
    if n_qubits > limit:
        raise RegisterTooLargeError(
            f"register too large: {n_qubits} qubits exceeds the dense limit of {limit}"
        )


@dataclass(frozen=True)
class PauliTerm:
    """A scaled Pauli string such as ``0.5 * XZI``."""

    coefficient: complex
    letters: str

    def __post_init__(self) -> None:
        if not self.letters or any(c not in "IXYZ" for c in self.letters):
            raise ValueError(f"invalid Pauli letters {self.letters!r}")
        object.__setattr__(self, "coefficient", complex(self.coefficient))

    @property
    def n_qubits(self) -> int:
        return len(self.letters)

    @cached_property
    def x_mask(self) -> int:
        """Bits flipped by the string (X or Y letters)."""
        n = self.n_qubits
        return sum(1 << (n - 1 - k) for k, c in enumerate(self.letters) if c in "XY")

    @cached_property
    def z_mask(self) -> int:
        """Bits that contribute a sign (Y or Z letters)."""
        n = self.n_qubits
        return sum(1 << (n - 1 - k) for k, c in enumerate(self.letters) if c in "YZ")

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(k for k, c in enumerate(self.letters) if c != "I")

    def __mul__(self, other: PauliTerm | complex) -> PauliTerm:
        if not isinstance(other, PauliTerm):
            return PauliTerm(self.coefficient * complex(other), self.letters)
        if other.n_qubits != self.n_qubits:
            raise ValueError("register sizes differ")
        phase: complex = self.coefficient * other.coefficient
        out = []
        for a, b in zip(self.letters, other.letters):
            ph, c = _PRODUCT_TABLE[(a, b)]
            phase *= ph
            out.append(c)
        return PauliTerm(phase, "".join(out))

    __rmul__ = __mul__

    def commutes_with(self, other: PauliTerm) -> bool:
        anti = sum(
            1 for a, b in zip(self.letters, other.letters) if a != "I" and b != "I" and a != b
        )
        return anti % 2 == 0

    def dense(self, limit: int | None = None) -> np.ndarray:
        _check_dense_size(self.n_qubits, limit)
        mats = [_PAULI_MATRICES[c] for c in self.letters]
        return self.coefficient * reduce(np.kron, mats)

    def action(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(perm, phase)`` with ``(P psi)[c] = phase[c] * psi[perm[c]]``."""
        d = 1 << self.n_qubits
        idx = np.arange(d, dtype=np.int64)
        perm = idx ^ self.x_mask
        n_y = sum(1 for c in self.letters if c == "Y")
        signs = 1 - 2 * (np.bitwise_count(perm & self.z_mask) & 1).astype(np.int64)
        return perm, self.coefficient * (1j**n_y) * signs


def _canonical_terms(terms: Iterable[PauliTerm], atol: float = 1e-14) -> tuple[PauliTerm, ...]:
    merged: dict[str, complex] = {}
    n = None
    for t in terms:
        if n is None:
            n = t.n_qubits
        elif t.n_qubits != n:
            raise ValueError("all terms must act on the same register")
        merged[t.letters] = merged.get(t.letters, 0) + t.coefficient
    return tuple(PauliTerm(c, s) for s, c in merged.items() if abs(c) > atol)


class OperatorSum:
    """A linear combination of Pauli strings on ``n_qubits`` qubits.

    Equal letter strings are merged on construction and vanishing coefficients
    are dropped, so two sums representing the same operator compare equal
    after :meth:`allclose`.
    """

    def __init__(self, terms: Iterable[PauliTerm], n_qubits: int | None = None):
        terms = list(terms)
        if n_qubits is None:
            if not terms:
                raise ValueError("n_qubits is required for an empty sum")
            n_qubits = terms[0].n_qubits
        if any(t.n_qubits != n_qubits for t in terms):
            raise ValueError("term length does not match the register size")
        self.terms: tuple[PauliTerm, ...] = _canonical_terms(terms)
        self.n_qubits = int(n_qubits)

    def __repr__(self) -> str:
        body = " + ".join(f"({t.coefficient:.6g}){t.letters}" for t in self.terms) or "0"
        return f"OperatorSum[{self.n_qubits}]({body})"

    # ----- constructors -------------------------------------------------
    @classmethod
    def zero(cls, n_qubits: int) -> OperatorSum:
        return cls([], n_qubits)

    @classmethod
    def identity(cls, n_qubits: int, coefficient: complex = 1.0) -> OperatorSum:
        return cls([PauliTerm(coefficient, "I" * n_qubits)])

    @classmethod
    def single(
        cls, n_qubits: int, letters: dict[int, str] | str, coefficient: complex = 1.0
    ) -> OperatorSum:
        """A single Pauli string given either in full or as ``{qubit: letter}``."""
        if isinstance(letters, str):
            return cls([PauliTerm(coefficient, letters)])
        chars = ["I"] * n_qubits
        for q, c in letters.items():
            chars[q] = c
        return cls([PauliTerm(coefficient, "".join(chars))])

    @classmethod
    def from_list(cls, data: Sequence[Sequence], n_qubits: int | None = None) -> OperatorSum:
        """Parse ``[["coeff", "XYZI"], ...]``; coefficients may be strings or numbers."""
        terms = [PauliTerm(complex(str(c).replace(" ", "")), str(s)) for c, s in data]
        return cls(terms, n_qubits)

    def to_list(self) -> list[list[str]]:
        out = []
        for t in self.terms:
            c = t.coefficient
            text = repr(c.real) if c.imag == 0 else repr(c)
            out.append([text, t.letters])
        return out

    # ----- algebra ------------------------------------------------------
    def __add__(self, other: OperatorSum) -> OperatorSum:
        self._check_register(other)
        return OperatorSum(self.terms + other.terms, self.n_qubits)

    def __sub__(self, other: OperatorSum) -> OperatorSum:
        return self + other * -1

    def __neg__(self) -> OperatorSum:
        return self * -1

    def __mul__(self, other: OperatorSum | complex) -> OperatorSum:
        if isinstance(other, OperatorSum):
            self._check_register(other)
            return OperatorSum([a * b for a in self.terms for b in other.terms], self.n_qubits)
        return OperatorSum([t * other for t in self.terms], self.n_qubits)

    def __rmul__(self, other: complex) -> OperatorSum:
        return self * other

    def commutator(self, other: OperatorSum) -> OperatorSum:
        """``[self, other]`` computed term-by-term (anticommuting pairs only)."""
        self._check_register(other)
        out = []
        for a in self.terms:
            for b in other.terms:
                if not a.commutes_with(b):
                    out.append(a * b * 2)
        return OperatorSum(out, self.n_qubits)

    def _check_register(self, other: OperatorSum) -> None:
        if other.n_qubits != self.n_qubits:
            raise ValueError("register sizes differ")

    # ----- structure ----------------------------------------------------
    def __len__(self) -> int:
        return len(self.terms)

    def allclose(self, other: OperatorSum, atol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(t.coefficient) <= atol for t in diff.terms)

    @cached_property
    def is_hermitian(self) -> bool:
        return all(abs(t.coefficient.imag) <= 1e-12 * max(1.0, abs(t.coefficient)) for t in self.terms)

    @cached_property
    def is_diagonal(self) -> bool:
        return all(t.x_mask == 0 for t in self.terms)

    @cached_property
    def terms_commute(self) -> bool:
        ts = self.terms
        return all(ts[i].commutes_with(ts[j]) for i in range(len(ts)) for j in range(i + 1, len(ts)))

    def anticommuting_part(self, pauli: PauliTerm) -> OperatorSum:
        """Terms of ``self`` that anticommute with ``pauli``."""
        return OperatorSum([t for t in self.terms if not t.commutes_with(pauli)], self.n_qubits)

    def real_coefficients(self) -> OperatorSum:
        """Drop imaginary rounding residue from a Hermitian sum."""
        if not self.is_hermitian:
            raise ValueError("operator is not Hermitian")
        return OperatorSum([PauliTerm(t.coefficient.real, t.letters) for t in self.terms], self.n_qubits)

    # ----- realisations -------------------------------------------------
    def dense(self, limit: int | None = None) -> np.ndarray:
        _check_dense_size(self.n_qubits, limit)
        return self.sparse(limit).toarray()

    def sparse(self, limit: int | None = None) -> sp.csr_matrix:
        d = 1 << self.n_qubits
        if not self.terms:
            return sp.csr_matrix((d, d), dtype=complex)
        rows = np.arange(d)
        mats = []
        for t in self.terms:
            perm, phase = t.action()
            mats.append(sp.csr_matrix((phase, (rows, perm)), shape=(d, d)))
        return reduce(lambda a, b: a + b, mats).tocsr()

    @cached_property
    def diagonal(self) -> np.ndarray:
        """Diagonal entries; only meaningful when :attr:`is_diagonal` holds."""
        d = 1 << self.n_qubits
        out = np.zeros(d, dtype=complex)
        for t in self.terms:
            _, phase = t.action()
            out += phase
        return out

    @cached_property
    def _actions(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [t.action() for t in self.terms]

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Apply the operator along the last axis of ``psi``."""
        if self.is_diagonal:
            return psi * self.diagonal
        out = np.zeros_like(psi, dtype=complex)
        for perm, phase in self._actions:
            out += phase * psi[..., perm]
        return out

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues (ascending) and eigenvectors of the dense realisation."""
        if not self.is_hermitian:
            raise ValueError("eigendecomposition requires a Hermitian operator")
        if self.is_diagonal:
            diag = self.diagonal.real
            order = np.argsort(diag, kind="stable")
            vecs = np.eye(len(diag), dtype=complex)[:, order]
            return diag[order], vecs
        return np.linalg.eigh(self.dense())

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        if self.is_diagonal:
            return np.sort(self.diagonal.real)
        return np.linalg.eigvalsh(self.dense())


@dataclass(frozen=True)
class Spectrum:
    """Sorted eigenvalues and the gap between the two lowest distinct levels."""

    eigenvalues: np.ndarray
    gap: float

    @property
    def ground_degenerate(self) -> bool:
        return self.gap == 0.0


def spectrum(op: OperatorSum | np.ndarray) -> Spectrum:
    """Spectrum of a Hermitian operator.

    Eigenvalues closer than ``1e-9 * ||H||`` to the ground energy count as
    degenerate with it, in which case the reported gap is 0.
    """
    evals = op.eigenvalues if isinstance(op, OperatorSum) else np.linalg.eigvalsh(op)
    evals = np.sort(np.asarray(evals, dtype=float))
    scale = max(abs(evals[0]), abs(evals[-1]), 1e-300)
    gap = float(evals[1] - evals[0]) if len(evals) > 1 else 0.0
    if gap <= DEGENERACY_RTOL * scale:
        gap = 0.0
    return Spectrum(evals, gap)


def dense(op: OperatorSum, limit: int | None = None) -> np.ndarray:
    """Exact ``2^n x 2^n`` matrix of ``op``."""
    return op.dense(limit)


def matrix_exponential(h: OperatorSum | np.ndarray, t: float) -> np.ndarray:
    """``exp(-i t H)`` via the Hermitian eigendecomposition of ``H``."""
    if isinstance(h, OperatorSum):
        if not h.is_hermitian:
            raise ValueError("matrix_exponential requires a Hermitian generator")
        evals, vecs = h.eigh
    else:
        evals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(-1j * t * evals)) @ vecs.conj().T


def spectral_norm(a: np.ndarray | OperatorSum, hermitian: bool | None = None) -> float:
    """Largest singular value; uses eigenvalues when ``a`` is Hermitian."""
    if isinstance(a, OperatorSum):
        if not a.terms:
            return 0.0
        if a.is_hermitian:
            ev = a.eigenvalues
            return float(max(abs(ev[0]), abs(ev[-1])))
        a = a.dense()
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("spectral_norm expects a square matrix")
    if hermitian is None:
        hermitian = np.allclose(a, a.conj().T, atol=1e-12 * max(1.0, float(np.abs(a).max(initial=0))))
    if hermitian:
        ev = np.linalg.eigvalsh(a)
        return float(np.max(np.abs(ev))) if ev.size else 0.0
    return float(np.linalg.norm(a, 2))


def nested_commutator(h: OperatorSum, a: OperatorSum, p: int) -> OperatorSum:
    """``[H, [H, ..., [H, A]]]`` with ``p`` nestings; ``p = 0`` returns ``A``."""
    if p < 0:
        raise ValueError("p must be non-negative")
    out = a
    for _ in range(p):
        out = h.commutator(out)
    return out


def dense_commutator(h: np.ndarray, a: np.ndarray) -> np.ndarray:
    return h @ a - a @ h


def max_frequency(h: OperatorSum | np.ndarray) -> float:
    """``lambda_max(H) - lambda_min(H)``."""
    ev = h.eigenvalues if isinstance(h, OperatorSum) else np.linalg.eigvalsh(h)
    return float(ev[-1] - ev[0])


def pauli_decompose(matrix: np.ndarray, atol: float = 1e-12) -> OperatorSum:
    """Expand a ``2^n x 2^n`` matrix in the Pauli basis (exact up to ``atol``)."""
    d = matrix.shape[0]
    n = d.bit_length() - 1
    if 1 << n != d:
        raise ValueError("matrix dimension must be a power of two")
    terms = []

    for letters in product("IXYZ", repeat=n):
        s = "".join(letters)
        probe = PauliTerm(1.0, s)
        perm, phase = probe.action()
        # Tr[P^dagger M] / d with P[c, perm[c]] = phase[c].
        coeff = np.sum(np.conj(phase) * matrix[np.arange(d), perm]) / d
        if abs(coeff) > atol:
            terms.append(PauliTerm(coeff, s))
    return OperatorSum(terms, n)
