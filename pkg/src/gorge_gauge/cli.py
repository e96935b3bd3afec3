"""``gorge-gauge`` command line.

Exit codes: 0 on success, 2 for an invalid configuration, 3 when a run
finishes but one of its checks (bound audit, reconstruction error,
upper-bound inequality, expected scaling exponent) fails.
"""
from __future__ import annotations

import dataclasses
import json
import sys

import click

from .experiments import ConfigError, parse_config, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VIOLATION = 3


def _load(config_path: str, seed: int | None):
    try:
        cfg = parse_config(config_path)
    except ConfigError as exc:
        for path, msg in exc.problems:
            click.echo(f"config error: {path}: {msg}", err=True)
        sys.exit(EXIT_CONFIG)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def _run_options(f):
    f = click.option("--cell", "cell_filter", default=None, help="Run only cells whose label matches this glob or substring.")(f)
    f = click.option("--threads", default=1, show_default=True, type=click.IntRange(min=1), help="Worker threads for sampling.")(f)
    f = click.option("--out", default=None, type=click.Path(file_okay=False), help="Output directory (overrides the config).")(f)
    f = click.option("--seed", default=None, type=click.IntRange(0, 2**64 - 1), help="Master seed (overrides the config).")(f)
    f = click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Experiment configuration (JSON).")(f)
    return f


def _make_command(experiment: str, summary: str):
    @_run_options
    def command(config_path, seed, out, threads, cell_filter):
        cfg = _load(config_path, seed)
        result = run(experiment, cfg, out, threads, cell_filter, log=lambda s: click.echo(s, err=True))
        for fit in result.fits:
            if "r_max" in fit:
                r = fit["r_max"]
                click.echo(f"{fit['group']}: r_max exponent {r['exponent']:.4f} +/- {r['stderr']:.4f}")
        click.echo(f"{len(result.cells)} cells ({result.skipped} cached), "
                   f"{result.violations} violations -> {result.out_dir}")
        sys.exit(EXIT_VIOLATION if result.violations else EXIT_OK)

    command.__doc__ = summary
    return click.command(name=experiment, help=summary)(command)


@click.group()
@click.version_option(package_name="artifact")
def main() -> None:
    """Loss-variance sweeps and certified variance lower bounds on parameter patches."""


main.add_command(_make_command("sweep", "Estimate the loss variance over a radius grid and locate its peak."))
main.add_command(_make_command("bounds", "Compute certified patch radii and audit them by sampling."))
main.add_command(_make_command("roa", "Certify a patch around a trained minimum."))
main.add_command(_make_command("fourier-check", "Compare the exact Fourier expansion with direct evaluation."))
main.add_command(_make_command("upper-bound", "Check the patch-inclusion upper bound on the second moment."))
main.add_command(_make_command("scaling", "Fit power laws of the variance peak against circuit size."))


@main.command("validate-config")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
def validate_config(config_path: str) -> None:
    """Validate a configuration and print the resolved cells."""
    cfg = _load(config_path, None)
    click.echo(json.dumps({"name": cfg.name, "seed": cfg.seed, "n_samples": cfg.n_samples,
                           "radii": len(cfg.radii), "cells": [c.label for c in cfg.cells]}, indent=2))


if __name__ == "__main__":  # pragma: no cover
    main()
