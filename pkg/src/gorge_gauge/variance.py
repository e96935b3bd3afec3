"""Monte-Carlo loss statistics over hypercube patches.

Every sample draws its offsets from its own Philox stream whose counter
encodes ``(sample_index, radius_index)``, so the estimate for a given seed
does not depend on how the samples are split across shards or threads.
Shard moments are merged in a fixed order with the pairwise update formulas
for central moments.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circuit import LossProblem, evaluate_batch, loss_derivative

DEFAULT_SAMPLES = 1000
SHARD_SIZE = 250
REFINE_STREAM_OFFSET = 1 << 20


def default_radii(n_points: int = 40, low: float = 1e-3, high: float = math.pi) -> np.ndarray:
    return np.geomspace(low, high, n_points)


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PatchSpec:
    """Hypercube of half-width ``half_width`` centred at ``center``."""

    center: np.ndarray
    half_width: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).copy())
        if self.center.ndim != 1:
            raise ValueError("centre must be a vector")
        if not self.half_width > 0:
            raise ValueError("half-width must be positive")


@dataclass(frozen=True)
class VarianceEstimate:
    mean: float
    variance: float
    std_error_of_variance: float
    n_samples: int
    seed: int
    radius: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SweepCurve:
    radii: np.ndarray
    estimates: tuple[VarianceEstimate, ...]

    def __post_init__(self) -> None:
        radii = np.asarray(self.radii, dtype=float)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "estimates", tuple(self.estimates))
        if len(radii) != len(self.estimates):
            raise ValueError("one estimate per radius is required")
        if len(radii) > 1 and not np.all(np.diff(radii) > 0):
            raise ValueError("radii must be strictly increasing")

    @property
    def variances(self) -> np.ndarray:
        return np.array([e.variance for e in self.estimates])

    @property
    def std_errors(self) -> np.ndarray:
        return np.array([e.std_error_of_variance for e in self.estimates])


# ---------------------------------------------------------------------------
# Moment accumulation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Moments:
    """Count, mean and central sums ``M_k = sum (x - mean)^k`` for k = 2, 3, 4."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def of(cls, x: np.ndarray) -> Moments:
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            return cls()
        mean = float(np.mean(x))
        d = x - mean
        d2 = d * d
        return cls(x.size, mean, float(d2.sum()), float((d2 * d).sum()), float((d2 * d2).sum()))

    def merge(self, other: Moments) -> Moments:
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        na, nb = self.n, other.n
        n = na + nb
        delta = other.mean - self.mean
        d_n = delta / n
        mean = self.mean + nb * d_n
        m2 = self.m2 + other.m2 + delta * d_n * na * nb
        m3 = (
            self.m3
            + other.m3
            + delta * d_n * d_n * na * nb * (na - nb)
            + 3 * d_n * (na * other.m2 - nb * self.m2)
        )
        m4 = (
            self.m4
            + other.m4
            + delta * d_n**3 * na * nb * (na * na - na * nb + nb * nb)
            + 6 * d_n * d_n * (na * na * other.m2 + nb * nb * self.m2)
            + 4 * d_n * (na * other.m3 - nb * self.m3)
        )
        return Moments(n, mean, m2, m3, m4)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def std_error_of_variance(self) -> float:
        """Standard error of the unbiased sample variance from the fourth moment."""
        n = self.n
        if n < 4:
            return float("inf")
        s2 = self.variance
        mu4 = self.m4 / n
        var_s2 = (mu4 - (n - 3) / (n - 1) * s2 * s2) / n
        return math.sqrt(max(var_s2, 0.0))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------
def seed_key(seed: int) -> np.ndarray:
    """Two 64-bit Philox key words derived from a user seed."""
    return np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint64)


def sample_offsets(seed: int, radius_index: int, sample_indices: Sequence[int], m: int) -> np.ndarray:
    """Uniform draws in ``[-1, 1]^m``, one counter-addressed stream per sample."""
    key = seed_key(seed)
    out = np.empty((len(sample_indices), m))
    for row, idx in enumerate(sample_indices):
        counter = np.array([0, 0, int(idx), int(radius_index)], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
        out[row] = gen.uniform(-1.0, 1.0, size=m)
    return out


def _shard_bounds(n_samples: int) -> list[tuple[int, int]]:
    return [(s, min(s + SHARD_SIZE, n_samples)) for s in range(0, n_samples, SHARD_SIZE)]


def _run_shards(
    task: Callable[[int, int], Moments], n_samples: int, threads: int
) -> Moments:
    bounds = _shard_bounds(n_samples)
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: task(*b), bounds))
    else:
        parts = [task(*b) for b in bounds]
    total = Moments()
    for part in parts:
        total = total.merge(part)
    return total


def loss_samples(
    problem: LossProblem, patch: PatchSpec, n_samples: int, seed: int, radius_index: int = 0
) -> np.ndarray:
    """All loss values of one patch estimate, in sample order."""
    offsets = sample_offsets(seed, radius_index, range(n_samples), problem.n_params)
    return evaluate_batch(problem, patch.center + patch.half_width * offsets)


def estimate_variance(
    problem: LossProblem,
    patch: PatchSpec,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    radius_index: int = 0,
    threads: int = 1,
) -> VarianceEstimate:
    """Unbiased variance of the loss over ``Unif(HC(center, r))``."""
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    if patch.center.shape != (problem.n_params,):
        raise ValueError(f"centre must have length {problem.n_params}")
    m = problem.n_params
    # Moments are accumulated on values shifted by the first sample so that a
    # constant loss yields exactly zero variance.
    ref = float(evaluate_batch(problem, patch.center + patch.half_width * sample_offsets(seed, radius_index, [0], m))[0])

    def task(start: int, stop: int) -> Moments:
        offs = sample_offsets(seed, radius_index, range(start, stop), m)
        vals = evaluate_batch(problem, patch.center + patch.half_width * offs)
        return Moments.of(vals - ref)

    mom = _run_shards(task, n_samples, threads)
    return VarianceEstimate(
        mean=mom.mean + ref,
        variance=mom.variance,
        std_error_of_variance=mom.std_error_of_variance,
        n_samples=n_samples,
        seed=int(seed),
        radius=float(patch.half_width),
    )


def estimate_second_moment(
    problem: LossProblem,
    patch: PatchSpec,
    n_samples: int,
    seed: int,
    radius_index: int = 0,
    shift: float = 0.0,
) -> tuple[float, float]:
    """MC estimate of ``E[(L - shift)^2]`` and its standard error."""
    vals = loss_samples(problem, patch, n_samples, seed, radius_index) - shift
    sq = vals * vals
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(n_samples))


def variance_sweep(
    problem: LossProblem,
    center: Sequence[float],
    radii: Sequence[float],
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    threads: int = 1,
) -> SweepCurve:
    """One independent estimate per radius (radius ``k`` uses stream ``k``)."""
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise ValueError("radii must be non-empty")
    center = np.asarray(center, dtype=float)
    ests = [
        estimate_variance(problem, PatchSpec(center, float(r)), n_samples, seed, k, threads)
        for k, r in enumerate(radii)
    ]
    return SweepCurve(radii, tuple(ests))


# ---------------------------------------------------------------------------
# Locating the variance maximum
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RMaxResult:
    r_max: float
    var_max: float
    grid_index: int
    flags: tuple[str, ...] = ()
    refined: bool = False
    evaluations: tuple[tuple[float, float], ...] = field(default=())


_GOLDEN = (math.sqrt(5) - 1) / 2


def find_rmax(
    curve: SweepCurve,
    problem: LossProblem | None = None,
    center: Sequence[float] | None = None,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    iterations: int = 10,
    threads: int = 1,
) -> RMaxResult:
    """Radius of the largest estimated variance.

    Ties go to the smaller radius.  A maximum on the last grid point is
    flagged ``"boundary maximum"``; an all-zero curve is flagged ``"no
    interior maximum"``.  When ``problem`` is given and the maximum is
    interior, a golden-section search in ``log r`` over the two grid cells
    on either side refines it.  Every refinement evaluation reuses one
    dedicated sample stream (common random numbers), so the estimated
    curve being searched is smooth in ``r``.
    """
    if len(curve.radii) == 0:
        raise ValueError("curve is empty")
    v = curve.variances
    k = int(np.argmax(v))  # argmax returns the first (smallest r) maximiser
    flags: list[str] = []
    if np.all(v == 0):
        return RMaxResult(float(curve.radii[0]), 0.0, 0, ("no interior maximum",))
    if k == len(v) - 1:
        flags.append("boundary maximum")
    if k == 0 and len(v) > 1:
        flags.append("lower boundary maximum")
    best_r, best_v = float(curve.radii[k]), float(v[k])
    if problem is None or flags or len(v) < 3:
        return RMaxResult(best_r, best_v, k, tuple(flags))

    center = np.zeros(problem.n_params) if center is None else np.asarray(center, dtype=float)
    evals: list[tuple[float, float]] = []

    def var_at(log_r: float) -> float:
        r = math.exp(log_r)
        est = estimate_variance(problem, PatchSpec(center, r), n_samples, seed, REFINE_STREAM_OFFSET, threads)
        evals.append((r, est.variance))
        return est.variance

    lo, hi = max(k - 2, 0), min(k + 2, len(v) - 1)
    a, b = math.log(curve.radii[lo]), math.log(curve.radii[hi])
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = var_at(c), var_at(d)
    for _ in range(iterations):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = var_at(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = var_at(d)
    best_r, best_v = max(evals, key=lambda e: e[1])
    return RMaxResult(best_r, best_v, k, (), True, tuple(evals))


# ---------------------------------------------------------------------------
# Fourth-order Taylor approximation of the patch variance
# ---------------------------------------------------------------------------
def taylor_derivatives(problem: LossProblem, center: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient ``g_i``, Hessian ``h_ij`` and ``t_ij = d_i d_j^2 L`` at ``center``."""
    center = np.asarray(center, dtype=float)
    m = problem.n_params
    g = np.array([loss_derivative(problem, center, {i: 1}) for i in range(m)])
    h = np.empty((m, m))
    t = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            if j >= i:
                h[i, j] = h[j, i] = loss_derivative(problem, center, {i: 2} if i == j else {i: 1, j: 1})
            t[i, j] = loss_derivative(problem, center, {i: 3} if i == j else {i: 1, j: 2})
    return g, h, t


def approx_variance(problem: LossProblem, center: Sequence[float], r: float) -> float:
    """Fourth-order expansion of the patch variance in the half-width ``r``.

    ``(r^2/3) sum g_i^2 + (r^4/9) sum_ij [h_ij^2 (1 - 3 d_ij/5)/2 + g_i t_ij (1 - 2 d_ij/5)]``
    """
    g, h, t = taylor_derivatives(problem, center)
    eye = np.eye(len(g))
    second = 0.5 * h * h * (1 - 0.6 * eye) + g[:, None] * t * (1 - 0.4 * eye)
    return float(r * r / 3 * np.sum(g * g) + r**4 / 9 * np.sum(second))
