"""Configuration-driven experiments: sweeps, bound audits, scaling fits.

A configuration is one JSON document.  It lists cells (one architecture
instance each) plus the sampling settings shared by all cells.  Each cell
is keyed by a hash of its resolved sub-configuration, results are written
per cell, and a rerun skips cells whose outputs already exist.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import re
import time
from dataclasses import dataclass, field
from fnmatch import fnmatch
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import scipy
from scipy import optimize, stats

from . import __version__
from .architectures import FAMILIES, ArchitectureSpec
from .bounds import (
    bound_report,
    region_of_attraction,
    upper_bound_check,
)
from .circuit import LossProblem, evaluate_batch, evaluate_loss, loss_derivative
from .fourier import fourier_coefficients
from .variance import (
    PatchSpec,
    SweepCurve,
    default_radii,
    estimate_variance,
    find_rmax,
    variance_sweep,
)

CSV_COLUMNS = ("r", "mean", "variance", "var_stderr", "n_samples", "seed")
STATEVECTOR_QUBIT_LIMIT = 20
EXTRA_FAMILIES = ("roa", "fidelity_product")
EXPERIMENTS = ("sweep", "bounds", "roa", "fourier-check", "upper-bound", "scaling")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists ``(field_path, message)`` pairs."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))


# ---------------------------------------------------------------------------
# Configuration model
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CellConfig:
    label: str
    architecture: ArchitectureSpec

    def resolved(self) -> dict:
        a = self.architecture
        return {
            "family": a.family,
            "n_qubits": a.n_qubits,
            "layers": a.layers,
            "correlated": a.correlated,
            "observable": a.observable,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    cells: tuple[CellConfig, ...]
    seed: int
    n_samples: int = 1000
    radii: tuple[float, ...] = tuple(default_radii())
    center: Any = "zero"
    outputs: str = "out"
    refine: bool = True
    radius_factors: tuple[float, ...] = (0.25, 0.5, 1.0)
    upper_bound: Mapping[str, Any] = field(default_factory=dict)
    fourier_points: int = 50
    fit_groups: tuple[str, ...] = ("family", "correlated", "observable")
    raw: Mapping[str, Any] = field(default_factory=dict)


def _layers_value(value: Any, n: int, path: str, problems: list) -> int | None:
    if isinstance(value, bool):
        problems.append((path, "must be an integer or an expression such as 'n' or '8n'"))
        return None
    if isinstance(value, int):
        if value < 1:
            problems.append((path, "must be positive"))
            return None
        return value
    if isinstance(value, str):
        m = re.fullmatch(r"\s*(\d*)\s*\*?\s*n\s*", value)
        if m:
            return (int(m.group(1)) if m.group(1) else 1) * n
    problems.append((path, "must be an integer or an expression such as 'n' or '8n'"))
    return None


def _parse_cells(data: Mapping, problems: list) -> list[CellConfig]:
    entries = data.get("cells")
    if entries is None:
        problems.append(("cells", "is required"))
        return []
    if not isinstance(entries, list) or not entries:
        problems.append(("cells", "must be a non-empty list"))
        return []
    cells: list[CellConfig] = []
    for i, entry in enumerate(entries):
        base = f"cells[{i}]"
        if not isinstance(entry, Mapping):
            problems.append((base, "must be an object"))
            continue
        family = entry.get("family")
        if family not in FAMILIES + EXTRA_FAMILIES:
            problems.append((f"{base}.family", f"must be one of {list(FAMILIES + EXTRA_FAMILIES)}"))
            continue
        ns = entry.get("n_qubits")
        ns = ns if isinstance(ns, list) else [ns]
        for j, n in enumerate(ns):
            npath = f"{base}.n_qubits" + (f"[{j}]" if len(ns) > 1 else "")
            if not isinstance(n, int) or isinstance(n, bool) or n < 1:
                problems.append((npath, "must be a positive integer"))
                continue
            if family in ("hva", "uccsd") and n % 2:
                problems.append((npath, f"{family} needs an even qubit count"))
                continue
            if family == "uccsd" and n < 4:
                problems.append((npath, "uccsd needs at least 4 qubits"))
                continue
            if family == "hea" and n < 2:
                problems.append((npath, "hea needs at least 2 qubits"))
                continue
            if n > STATEVECTOR_QUBIT_LIMIT:
                problems.append((npath, f"exceeds the {STATEVECTOR_QUBIT_LIMIT}-qubit simulation limit"))
                continue
            layers = _layers_value(entry.get("layers", 1), n, f"{base}.layers", problems)
            if layers is None:
                continue
            correlated = entry.get("correlated", False)
            if not isinstance(correlated, bool):
                problems.append((f"{base}.correlated", "must be a boolean"))
                continue
            observable = entry.get("observable", "global")
            if family == "hea" and observable not in ("global", "local"):
                problems.append((f"{base}.observable", "must be 'global' or 'local' for hea"))
                continue
            spec = ArchitectureSpec(family, n, layers, correlated, observable)
            label = entry.get("label") or _default_label(spec)
            cells.append(CellConfig(str(label), spec))
    return cells


def _default_label(a: ArchitectureSpec) -> str:
    parts = [a.family, f"n{a.n_qubits}", f"L{a.layers}"]
    if a.correlated:
        parts.append("corr")
    if a.family == "hea":
        parts.append(a.observable)
    return "-".join(parts)


def parse_config(data: Mapping | str | Path) -> ExperimentConfig:
    """Validate a configuration and resolve defaults.

    Raises :class:`ConfigError` naming every offending field path.
    """
    if isinstance(data, (str, Path)):
        path = Path(data)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError([("<file>", f"{path} does not exist")]) from None
        except json.JSONDecodeError as exc:
            raise ConfigError([("<file>", f"invalid JSON: {exc}")]) from None
    if not isinstance(data, Mapping):
        raise ConfigError([("<root>", "must be a JSON object")])
    problems: list[tuple[str, str]] = []
    name = data.get("name", "experiment")
    if not isinstance(name, str) or not name:
        problems.append(("name", "must be a non-empty string"))
    seed = data.get("seed")
    if seed is None:
        problems.append(("seed", "is required"))
    elif not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        problems.append(("seed", "must be an unsigned 64-bit integer"))
    n_samples = data.get("n_samples", 1000)
    if not isinstance(n_samples, int) or isinstance(n_samples, bool) or n_samples < 2:
        problems.append(("n_samples", "must be an integer >= 2"))
    radii_raw = data.get("radii", {"low": 1e-3, "high": math.pi, "points": 40})
    radii: tuple[float, ...] = ()
    if isinstance(radii_raw, list):
        if not radii_raw:
            problems.append(("radii", "must be non-empty"))
        elif not all(isinstance(r, (int, float)) and not isinstance(r, bool) and r > 0 for r in radii_raw):
            problems.append(("radii", "entries must be positive numbers"))
        elif any(b <= a for a, b in zip(radii_raw, radii_raw[1:])):
            problems.append(("radii", "must be strictly increasing"))
        else:
            radii = tuple(float(r) for r in radii_raw)
    elif isinstance(radii_raw, Mapping):
        try:
            low, high, pts = float(radii_raw["low"]), float(radii_raw["high"]), int(radii_raw["points"])
            if not 0 < low < high or pts < 1:
                raise ValueError
            radii = tuple(default_radii(pts, low, high))
        except (KeyError, TypeError, ValueError):
            problems.append(("radii", "grid needs 0 < low < high and points >= 1"))
    else:
        problems.append(("radii", "must be a list or a {low, high, points} grid"))
    center = data.get("center", "zero")
    if not (
        center == "zero"
        or (isinstance(center, Mapping) and set(center) == {"custom"} and isinstance(center["custom"], list))
        or (isinstance(center, Mapping) and set(center) == {"trained-minimum"} and isinstance(center["trained-minimum"], Mapping))
    ):
        problems.append(("center", "must be 'zero', {'custom': [...]} or {'trained-minimum': {...}}"))
    factors = data.get("radius_factors", [0.25, 0.5, 1.0])
    if not isinstance(factors, list) or not factors or not all(isinstance(f, (int, float)) and f > 0 for f in factors):
        problems.append(("radius_factors", "must be a non-empty list of positive numbers"))
    ub = data.get("upper_bound", {})
    if not isinstance(ub, Mapping):
        problems.append(("upper_bound", "must be an object"))
    cells = _parse_cells(data, problems)
    if isinstance(center, Mapping) and "custom" in center:
        for c in cells:
            if len(center["custom"]) != c.architecture.build().n_params:
                problems.append(("center.custom", f"length does not match the parameter count of cell {c.label}"))
                break
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        name=name,
        cells=tuple(cells),
        seed=int(seed),
        n_samples=int(n_samples),
        radii=radii,
        center=center,
        outputs=str(data.get("outputs", f"out/{name}")),
        refine=bool(data.get("refine", True)),
        radius_factors=tuple(float(f) for f in factors),
        upper_bound=dict(ub),
        fourier_points=int(data.get("fourier_points", 50)),
        fit_groups=tuple(data.get("fit_groups", ("family", "correlated", "observable"))),
        raw=dict(data),
    )


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------
def format_float(x: float) -> str:
    return repr(float(x)) if not math.isfinite(x) else f"{x:.17g}"


def sweep_csv(curve: SweepCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r, e in zip(curve.radii, curve.estimates):
        w.writerow([format_float(r), format_float(e.mean), format_float(e.variance),
                    format_float(e.std_error_of_variance), e.n_samples, e.seed])
    return buf.getvalue()


def cell_key(experiment: str, cell: CellConfig, config: ExperimentConfig) -> str:
    payload = {
        "experiment": experiment,
        "cell": cell.resolved(),
        "seed": config.seed,
        "n_samples": config.n_samples,
        "radii": list(config.radii),
        "center": config.center,
        "refine": config.refine,
        "radius_factors": list(config.radius_factors),
        "upper_bound": config.upper_bound,
        "version": __version__,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def cell_seed(config: ExperimentConfig, cell: CellConfig) -> int:
    blob = json.dumps([config.seed, cell.resolved()], sort_keys=True).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass(frozen=True)
class ScalingFit:
    xs: np.ndarray
    ys: np.ndarray
    exponent: float
    stderr: float
    intercept: float

    def as_dict(self) -> dict:
        return {"xs": self.xs.tolist(), "ys": self.ys.tolist(), "exponent": self.exponent,
                "stderr": self.stderr, "intercept": self.intercept}


def fit_scaling(xs: Sequence[float], ys: Sequence[float]) -> ScalingFit:
    """Least-squares slope of ``log y`` against ``log x``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 3:
        raise ValueError("a scaling fit needs at least three (x, y) points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("scaling fits need positive values")
    res = stats.linregress(np.log(xs), np.log(ys))
    return ScalingFit(xs, ys, float(res.slope), float(res.stderr), float(res.intercept))


def trained_minimum(problem: LossProblem, seed: int, restarts: int = 4, max_steps: int = 500) -> np.ndarray:
    """Lowest local minimum found by BFGS from seeded random starts."""
    rng = np.random.default_rng(seed)
    m = problem.n_params

    def fun(theta: np.ndarray) -> float:
        return evaluate_loss(problem, theta)

    def grad(theta: np.ndarray) -> np.ndarray:
        return np.array([loss_derivative(problem, theta, {p: 1}) for p in range(m)])

    best = None
    for _ in range(restarts):
        start = rng.uniform(-math.pi, math.pi, size=m)
        res = optimize.minimize(fun, start, jac=grad, method="BFGS",
                                options={"maxiter": max_steps, "gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    return np.asarray(best.x)


def resolve_center(config: ExperimentConfig, problem: LossProblem, seed: int) -> np.ndarray:
    c = config.center
    if c == "zero":
        return np.zeros(problem.n_params)
    if "custom" in c:
        return np.asarray(c["custom"], dtype=float)
    opts = c["trained-minimum"]
    return trained_minimum(problem, int(opts.get("seed", seed)), int(opts.get("restarts", 4)),
                           int(opts.get("steps", 500)))


# ---------------------------------------------------------------------------
# Cell runners
# ---------------------------------------------------------------------------
CellRunner = Callable[[ExperimentConfig, CellConfig, int, int], dict]


def run_sweep_cell(config: ExperimentConfig, cell: CellConfig, seed: int, threads: int) -> dict:
    problem = cell.architecture.build()
    center = resolve_center(config, problem, seed)
    curve = variance_sweep(problem, center, config.radii, config.n_samples, seed, threads)
    rmax = find_rmax(curve, problem if config.refine else None, center, config.n_samples, seed, threads=threads)
    return {
        "label": cell.label,
        "cell": cell.resolved(),
        "n_params": problem.n_params,
        "n_generators": problem.circuit.n_generators,
        "seed": seed,
        "r_max": rmax.r_max,
        "var_max": rmax.var_max,
        "flags": list(rmax.flags),
        "refined": rmax.refined,
        "csv": sweep_csv(curve),
    }


def run_bounds_cell(config: ExperimentConfig, cell: CellConfig, seed: int, threads: int) -> dict:
    """Bound report plus the Monte-Carlo audit at each radius factor."""
    problem = cell.architecture.build()
    center = resolve_center(config, problem, seed)
    report = bound_report(problem, center)
    checks = []
    for k, f in enumerate(config.radius_factors):
        r = f * report.r_patch
        est = estimate_variance(problem, PatchSpec(center, r), config.n_samples, seed, k, threads)
        lb = report.variance_lb_at(r)
        checks.append({
            "factor": f, "r": r, "variance": est.variance, "std_error": est.std_error_of_variance,
            "lower_bound": lb, "ok": bool(est.variance + 3 * est.std_error_of_variance >= lb),
        })
    return {"label": cell.label, "cell": cell.resolved(), "seed": seed, "report": report.as_dict(),
            "checks": checks, "violations": sum(not c["ok"] for c in checks)}


def run_roa_cell(config: ExperimentConfig, cell: CellConfig, seed: int, threads: int) -> dict:
    problem = cell.architecture.build()
    theta = resolve_center(config, problem, seed)
    rep = region_of_attraction(problem, theta)
    out = {"label": cell.label, "cell": cell.resolved(), "seed": seed, "theta_star": theta.tolist(),
           "report": rep.as_dict(), "checks": []}
    violations = 0
    if rep.condition_ok and math.isfinite(rep.r_patch_star):
        for k, (r, lb) in enumerate(((rep.r_patch_star, rep.variance_lb), (rep.r_patch_safe, rep.variance_lb_safe))):
            est = estimate_variance(problem, PatchSpec(theta, r), config.n_samples, seed, k, threads)
            ok = bool(est.variance + 3 * est.std_error_of_variance >= lb)
            violations += not ok
            out["checks"].append({"r": r, "variance": est.variance, "std_error": est.std_error_of_variance,
                                  "lower_bound": lb, "ok": ok})
    else:
        violations += 1
    out["violations"] = violations
    return out


def run_upper_bound_cell(config: ExperimentConfig, cell: CellConfig, seed: int, threads: int) -> dict:
    problem = cell.architecture.build()
    center = resolve_center(config, problem, seed)
    ub = config.upper_bound
    r_full = float(ub.get("r_full", math.pi))
    rs = [float(r) for r in ub.get("r", [0.5])]
    reports = [upper_bound_check(problem, center, r_full, r, int(ub.get("n_samples", config.n_samples)), seed)
               for r in rs]
    return {"label": cell.label, "cell": cell.resolved(), "seed": seed,
            "checks": [r.as_dict() for r in reports], "violations": sum(not r.holds for r in reports)}


def run_fourier_cell(config: ExperimentConfig, cell: CellConfig, seed: int, threads: int) -> dict:
    problem = cell.architecture.build()
    table = fourier_coefficients(problem)
    rng = np.random.default_rng(seed)
    thetas = rng.uniform(-math.pi, math.pi, size=(config.fourier_points, problem.n_params))
    err = float(np.max(np.abs(table.evaluate(thetas) - evaluate_batch(problem, thetas))))
    return {"label": cell.label, "cell": cell.resolved(), "seed": seed, "n_terms": len(table.coefficients),
            "max_error": err, "reality_residual": table.reality_residual(),
            "violations": int(err > 1e-8)}


RUNNERS: dict[str, CellRunner] = {
    "sweep": run_sweep_cell,
    "scaling": run_sweep_cell,
    "bounds": run_bounds_cell,
    "roa": run_roa_cell,
    "upper-bound": run_upper_bound_cell,
    "fourier-check": run_fourier_cell,
}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------
@dataclass
class RunResult:
    out_dir: Path
    cells: list[dict]
    violations: int
    fits: list[dict] = field(default_factory=list)
    skipped: int = 0


def _group_key(cell: Mapping, groups: Sequence[str]) -> str:
    return "-".join(f"{g}={cell[g]}" for g in groups if g in cell)


def scaling_fits(results: Sequence[dict], groups: Sequence[str]) -> list[dict]:
    """Fit ``r_max`` and ``var_max`` against the generator count per group."""
    buckets: dict[str, list[dict]] = {}
    for res in results:
        buckets.setdefault(_group_key(res["cell"], groups), []).append(res)
    fits = []
    for key, rows in sorted(buckets.items()):
        rows = sorted(rows, key=lambda r: r["n_generators"])
        entry: dict[str, Any] = {"group": key, "points": len(rows)}
        if len(rows) >= 3:
            xs = [r["n_generators"] for r in rows]
            entry["r_max"] = fit_scaling(xs, [r["r_max"] for r in rows]).as_dict()
            if all(r["var_max"] > 0 for r in rows):
                entry["var_max"] = fit_scaling(xs, [r["var_max"] for r in rows]).as_dict()
        fits.append(entry)
    return fits


def run(
    experiment: str,
    config: ExperimentConfig,
    out: str | Path | None = None,
    threads: int = 1,
    cell_filter: str | None = None,
    log: Callable[[str], None] = lambda s: None,
) -> RunResult:
    if experiment not in RUNNERS:
        raise ValueError(f"unknown experiment {experiment!r}")
    out_dir = Path(out if out is not None else config.outputs)
    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    runner = RUNNERS[experiment]
    results, skipped = [], 0
    for cell in config.cells:
        if cell_filter and not fnmatch(cell.label, cell_filter) and cell_filter not in cell.label:
            continue
        key = cell_key(experiment, cell, config)
        path = cells_dir / f"{experiment}-{cell.label}-{key}.json"
        if path.exists():
            results.append(json.loads(path.read_text()))
            skipped += 1
            log(f"{cell.label}: cached")
            continue
        t0 = time.perf_counter()
        res = runner(config, cell, cell_seed(config, cell), threads)
        res["key"] = key
        path.write_text(json.dumps(res, indent=2, sort_keys=True))
        if "csv" in res:
            (out_dir / f"{experiment}-{cell.label}.csv").write_text(res["csv"])
        log(f"{cell.label}: done in {time.perf_counter() - t0:.1f}s")
        results.append(res)
    violations = sum(int(r.get("violations", 0)) for r in results)
    fits = scaling_fits(results, config.fit_groups) if experiment == "scaling" else []
    for entry in fits:
        expected = config.raw.get("expected_exponents", {}).get(entry["group"])
        if expected is not None:
            value, tol = expected
            got = entry.get("r_max", {}).get("exponent", math.nan)
            entry["expected"] = {"exponent": value, "tolerance": tol, "ok": bool(abs(got - value) <= tol)}
            violations += not entry["expected"]["ok"]
    if fits:
        (out_dir / "scaling.json").write_text(json.dumps(fits, indent=2))
    summary = [{k: v for k, v in r.items() if k != "csv"} for r in results]
    (out_dir / f"{experiment}-summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    manifest = {
        "experiment": experiment,
        "name": config.name,
        "seed": config.seed,
        "cells": {r["label"]: {"key": r["key"], "seed": r["seed"]} for r in results},
        "versions": {"gorge_gauge": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "violations": violations,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return RunResult(out_dir, results, violations, fits, skipped)
