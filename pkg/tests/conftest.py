"""Shared builders for randomised circuit tests."""
from __future__ import annotations

import numpy as np
import pytest

from gorge_gauge.circuit import Gate, LossProblem, ParameterizedCircuit, PauliExponential
from gorge_gauge.operators import OperatorSum, PauliTerm


def random_pauli_sum(rng: np.random.Generator, n: int, n_terms: int, scale: float = 1.0) -> OperatorSum:
    terms = []
    for _ in range(n_terms):
        letters = "".join(rng.choice(list("IXYZ"), size=n))
        if set(letters) == {"I"}:
            letters = "Z" + letters[1:]
        terms.append(PauliTerm(complex(scale * rng.uniform(-1, 1)), letters))
    return OperatorSum(terms, n)


def random_state(rng: np.random.Generator, n: int, mixed: bool = False) -> np.ndarray:
    d = 1 << n
    if not mixed:
        v = rng.normal(size=d) + 1j * rng.normal(size=d)
        return v / np.linalg.norm(v)
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_problem(
    rng: np.random.Generator,
    n: int,
    n_gates: int,
    n_params: int | None = None,
    fixed_prob: float = 0.5,
    mixed: bool = False,
) -> LossProblem:
    """A random circuit with Pauli-sum generators and occasional fixed unitaries.

    ``n_params < n_gates`` makes some gates share parameters.
    """
    m = n_gates if n_params is None else n_params
    params = list(range(m)) + list(rng.integers(0, m, size=n_gates - m))
    rng.shuffle(params)
    gates = []
    for p in params:
        h = random_pauli_sum(rng, n, int(rng.integers(1, 3)))
        fixed = PauliExponential(random_pauli_sum(rng, n, 2)) if rng.random() < fixed_prob else None
        gates.append(Gate(h, int(p), fixed))
    circuit = ParameterizedCircuit(tuple(gates), n, m)
    obs = random_pauli_sum(rng, n, int(rng.integers(1, 4)))
    return LossProblem(circuit, random_state(rng, n, mixed), obs)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# Acceptance summary: one PASS/FAIL line per criterion
# ---------------------------------------------------------------------------
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        entries = ACCEPTANCE[k]
        ok = all(e[0] for e in entries)
        failed = [d for good, d in entries if not good]
        detail = "; ".join(failed) if failed else "; ".join(d for _, d in entries)
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
