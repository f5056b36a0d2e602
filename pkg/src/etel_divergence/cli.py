"""CLI entry point for etel-divergence."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Sequence
from enum import Enum
from pathlib import Path
from typing import Any, NoReturn

import numpy as np
import pandas as pd
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table as RichTable

from etel_divergence import BUILTIN_MODEL, __version__
from etel_divergence.asymptotics import (
    closed_form_approx_t,
    influence_report,
    power_approx_s,
    power_approx_t,
)
from etel_divergence.config import load_experiment_config
from etel_divergence.divergence import power_divergence_phi
from etel_divergence.errors import ConfigError, EtelError, NullInfeasible, NumericalError
from etel_divergence.estimators import estimate
from etel_divergence.inference import run_simple_test
from etel_divergence.io import load_sample, sha256_file, utcnow_iso, write_csv, write_json
from etel_divergence.models import Family, Method, RunManifest
from etel_divergence.montecarlo import draw_normal_sample, power_curve, run_experiment
from etel_divergence.moments import MomentModel, Sample, mean_variance_normal_model
from etel_divergence.rng import derive_seed

app = typer.Typer(
    name="etel-div",
    help="etel-divergence: ETEL estimation and phi-divergence tests for moment models.",
    add_completion=False,
    no_args_is_help=True,
)
console = Console()

MAX_GRID_POINTS = 10_000
DEFAULT_POWER_SEED = 20240917


class ModelOption(str, Enum):
    mean_variance_normal = BUILTIN_MODEL


class MethodOption(str, Enum):
    el = "el"
    et = "et"
    etel = "etel"


class FamilyOption(str, Enum):
    t = "t"
    s = "s"
    g2 = "g2"


class PowerFamilyOption(str, Enum):
    t = "t"
    s = "s"


def _noop(*_args: object, **_kwargs: object) -> None:
    return None


def _printer(quiet: bool) -> Callable[..., None]:
    return _noop if quiet else console.print


def _err(msg: str) -> None:
    console.print(f"[red]x[/red] {msg}")


# ── Helpers ──────────────────────────────────────────────────────


def _version_callback(value: bool) -> None:
    if value:
        console.print(f"etel-divergence v{__version__}")
        raise typer.Exit()


def _configure_logging(verbose: bool) -> None:
    pkg_logger = logging.getLogger("etel_divergence")
    pkg_logger.handlers = [RichHandler(console=console, show_path=False, markup=False)]
    pkg_logger.setLevel(logging.DEBUG if verbose else logging.WARNING)
    pkg_logger.propagate = False


def _parse_grid(spec: str) -> list[float]:
    """Parse ``start:stop:step`` or a comma list such as ``0,0.25,0.5``."""
    text = spec.strip()
    usage = f"Invalid grid spec {spec!r} (expected start:stop:step or a comma list)"
    if not text:
        raise ValueError(usage)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(usage)
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise ValueError(usage) from None
        if not all(math.isfinite(v) for v in (start, stop, step)) or step <= 0 or stop < start:
            raise ValueError(f"{usage}; need finite start <= stop and step > 0")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        if count > MAX_GRID_POINTS:
            raise ValueError(f"Grid spec {spec!r} has {count} points (max {MAX_GRID_POINTS})")
        return [round(start + k * step, 12) for k in range(count)]
    try:
        values = [float(item) for item in text.split(",")]
    except ValueError:
        raise ValueError(usage) from None
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"{usage}; values must be finite")
    return values


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, NullInfeasible):
        return 4
    if isinstance(exc, (NumericalError, np.linalg.LinAlgError)):
        return 3
    if isinstance(exc, (EtelError, ValueError, OSError)):
        return 2
    return 1


def _write_manifest(
    out_dir: Path,
    command: str,
    created_at: str,
    started: float,
    *,
    config: dict[str, Any],
    input_file: Path | None = None,
    master_seed: int | None = None,
    outputs: Sequence[Path] = (),
    status: str = "success",
    error_code: int | None = None,
    error_message: str = "",
) -> Path:
    sha256 = ""
    if input_file is not None:
        try:
            sha256 = sha256_file(input_file)
        except OSError:
            pass

    manifest = RunManifest(
        command=command,
        version=__version__,
        config=config,
        master_seed=master_seed,
        input_path=str(input_file.resolve()) if input_file is not None else "",
        sha256=sha256,
        outputs=[str(p.resolve()) for p in outputs],
        created_at_utc=created_at,
        wall_clock_seconds=max(time.perf_counter() - started, 0.0),
        status=status,
        error_code=error_code,
        error_message=error_message,
    )
    return write_json(out_dir / "manifest.json", manifest.to_dict())


def _fail(
    out_dir: Path,
    command: str,
    created_at: str,
    started: float,
    exc: BaseException,
    *,
    config: dict[str, Any],
    input_file: Path | None = None,
    master_seed: int | None = None,
) -> NoReturn:
    code = _exit_code(exc)
    if code == 1:
        message = f"Unexpected internal error: {type(exc).__name__}: {exc}"
    else:
        message = f"{type(exc).__name__}: {exc}"
    manifest_path = _write_manifest(
        out_dir,
        command,
        created_at,
        started,
        config=config,
        input_file=input_file,
        master_seed=master_seed,
        status="failed",
        error_code=code,
        error_message=message,
    )
    _err(message)
    console.print(f"  Manifest -> {manifest_path}")
    raise typer.Exit(code=code)


def _load(data: Path, delta: float) -> tuple[Sample, MomentModel]:
    sample = Sample.from_values(load_sample(data))
    return sample, mean_variance_normal_model(delta)


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


# ── Callbacks ────────────────────────────────────────────────────


@app.callback()
def main(
    version: bool | None = typer.Option(
        None, "--version", "-V",
        help="Show version and exit.",
        callback=_version_callback,
        is_eager=True,
    ),
    verbose: bool = typer.Option(
        False, "--verbose", "-v",
        help="Log solver and replication progress at DEBUG level.",
    ),
) -> None:
    """etel-divergence CLI."""
    _configure_logging(verbose)


# ── estimate command ─────────────────────────────────────────────


@app.command("estimate")
def estimate_cmd(
    data: Path = typer.Option(
        ..., "--data", "-d",
        help="Single-column CSV of observations (optional header 'x').",
    ),
    model: ModelOption = typer.Option(
        ModelOption.mean_variance_normal, "--model", "-m",
        help="Moment model; only the builtin mean/variance normal model is exposed.",
    ),
    delta: float = typer.Option(1.0, "--delta", help="Working-model delta in E[X^2] = 2θ² + δ."),
    method: MethodOption = typer.Option(
        MethodOption.etel, "--method",
        help="Implied-probability estimator: el, et or etel.",
    ),
    init: float | None = typer.Option(
        None, "--init",
        help="Starting value for the outer search (default: sample mean).",
    ),
    out_dir: Path = typer.Option(
        Path("output"), "--out-dir", "-o",
        help="Output directory for result.json + manifest.json.",
    ),
    quiet: bool = typer.Option(
        False, "--quiet", "-q",
        help="Suppress informational output; still writes all artifacts.",
    ),
) -> None:
    """Fit theta by EL, ET or ETEL on a data file."""
    echo = _printer(quiet)
    started = time.perf_counter()
    created_at = utcnow_iso()
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = {"model": model.value, "delta": delta, "method": method.value, "init": init}
    try:
        sample, moment_model = _load(data, delta)
        chosen = Method.parse(method.value)
        echo(f"[blue]>[/blue] Fitting {chosen.value} on {sample.n} observations …")
        result = estimate(chosen, moment_model, sample, init)
        payload = {"model": model.value, "delta": delta, "n": sample.n, **result.to_dict()}
        result_path = write_json(out_dir / "result.json", payload)
        echo(f"  Result   -> {result_path}")
        manifest_path = _write_manifest(
            out_dir,
            "estimate",
            created_at,
            started,
            config=settings,
            input_file=data,
            outputs=[result_path],
        )
        echo(f"  Manifest -> {manifest_path}")

        if not quiet:
            status = (
                "[green]converged[/green]" if result.converged else "[yellow]not converged[/yellow]"
            )
            console.print(Panel(
                f"theta_hat = {_fmt(result.theta_hat.tolist())}  ({status}, "
                f"{result.outer_iterations} outer iterations)",
                title=f"{chosen.value} Estimate", border_style="green",
            ))
    except typer.Exit:
        raise
    except Exception as exc:
        _fail(out_dir, "estimate", created_at, started, exc, config=settings, input_file=data)


# ── test command ─────────────────────────────────────────────────


@app.command("test")
def test_cmd(
    data: Path = typer.Option(
        ..., "--data", "-d",
        help="Single-column CSV of observations (optional header 'x').",
    ),
    theta0: float = typer.Option(..., "--theta0", help="Null value of theta."),
    family: FamilyOption = typer.Option(
        FamilyOption.t, "--family", "-f",
        help="Statistic family: t (divergence from uniform), s (between tilts) or g2.",
    ),
    lam: float = typer.Option(
        0.0, "--lambda", "-l",
        help="Cressie-Read lambda of the phi generator (ignored for g2).",
    ),
    estimator: MethodOption = typer.Option(
        MethodOption.etel, "--estimator", "-e",
        help="Estimator whose implied probabilities enter the statistic.",
    ),
    alpha: float = typer.Option(0.05, "--alpha", "-a", help="Significance level in (0, 1)."),
    delta: float = typer.Option(1.0, "--delta", help="Working-model delta in E[X^2] = 2θ² + δ."),
    init: float | None = typer.Option(None, "--init", help="Starting value for the fit."),
    out_dir: Path = typer.Option(
        Path("output"), "--out-dir", "-o",
        help="Output directory for result.json + manifest.json.",
    ),
    quiet: bool = typer.Option(
        False, "--quiet", "-q",
        help="Suppress informational output; still writes all artifacts.",
    ),
) -> None:
    """Test H0: theta = theta0 with a phi-divergence statistic.

    Exit 0 = test computed, 2 = bad input, 3 = solver failure,
    4 = tilt infeasible at theta0.
    """
    echo = _printer(quiet)
    started = time.perf_counter()
    created_at = utcnow_iso()
    out_dir.mkdir(parents=True, exist_ok=True)
    chosen_family = Family.parse(family.value)
    lam_value = None if chosen_family is Family.G2 else lam
    settings = {
        "theta0": theta0,
        "family": family.value,
        "lambda": lam_value,
        "estimator": estimator.value,
        "alpha": alpha,
        "delta": delta,
        "init": init,
    }
    try:
        if not 0.0 < alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
        sample, moment_model = _load(data, delta)
        echo(f"[blue]>[/blue] Testing theta = {theta0:g} with {chosen_family.value} …")
        outcome = run_simple_test(
            moment_model,
            sample,
            theta0,
            chosen_family,
            None if lam_value is None else power_divergence_phi(lam_value),
            None,
            Method.parse(estimator.value),
            alpha,
            init=init,
        )
        payload = {**outcome.to_dict(), "lambda": lam_value, "n": sample.n}
        result_path = write_json(out_dir / "result.json", payload)
        echo(f"  Result   -> {result_path}")
        manifest_path = _write_manifest(
            out_dir,
            "test",
            created_at,
            started,
            config=settings,
            input_file=data,
            outputs=[result_path],
        )
        echo(f"  Manifest -> {manifest_path}")

        if not quiet:
            table = RichTable(title="Simple-null test", show_lines=True)
            table.add_column("Field", style="cyan")
            table.add_column("Value", justify="right")
            for key in ("statistic", "critical_value", "p_value", "df", "theta_hat"):
                table.add_row(key, _fmt(payload[key]))
            verdict = "[red]reject[/red]" if outcome.reject else "[green]retain[/green]"
            table.add_row("decision", verdict)
            console.print(table)
    except typer.Exit:
        raise
    except Exception as exc:
        _fail(out_dir, "test", created_at, started, exc, config=settings, input_file=data)


# ── power command ────────────────────────────────────────────────


@app.command("power")
def power_cmd(
    theta_star: str = typer.Option(
        ..., "--theta-star", "-t",
        help="Alternative grid: start:stop:step or a comma list.",
    ),
    theta0: float = typer.Option(0.0, "--theta0", help="Null value of theta."),
    lam: float = typer.Option(-1.0, "--lambda", "-l", help="Cressie-Read lambda."),
    n: int = typer.Option(100, "--n", help="Sample size at which power is approximated."),
    alpha: float = typer.Option(0.05, "--alpha", "-a", help="Significance level in (0, 1)."),
    closed_form: bool = typer.Option(
        False, "--closed-form",
        help="Use the closed forms for the builtin model (t family, theta0 = 0, delta = 1).",
    ),
    family: PowerFamilyOption = typer.Option(
        PowerFamilyOption.t, "--family", "-f",
        help="Statistic family for the plug-in path: t or s.",
    ),
    delta: float = typer.Option(1.0, "--delta", help="Model delta; data are N(θ*, θ*² + δ)."),
    eval_draws: int = typer.Option(
        20000, "--eval-draws",
        help="Simulated draws under theta* used for the plug-in expectations.",
    ),
    seed: int = typer.Option(DEFAULT_POWER_SEED, "--seed", help="Master seed for the draws."),
    out_dir: Path = typer.Option(
        Path("output"), "--out-dir", "-o",
        help="Output directory for power.csv + manifest.json.",
    ),
    quiet: bool = typer.Option(
        False, "--quiet", "-q",
        help="Suppress informational output; still writes all artifacts.",
    ),
) -> None:
    """Approximate the ETEL power under fixed alternatives."""
    echo = _printer(quiet)
    started = time.perf_counter()
    created_at = utcnow_iso()
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = {
        "theta_star": theta_star,
        "theta0": theta0,
        "lambda": lam,
        "n": n,
        "alpha": alpha,
        "closed_form": closed_form,
        "family": family.value,
        "delta": delta,
        "eval_draws": eval_draws,
    }
    try:
        grid = _parse_grid(theta_star)
        if not 0.0 < alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
        if n < 1:
            raise ConfigError(f"n must be >= 1, got {n}")
        if closed_form and (family is not PowerFamilyOption.t or theta0 != 0.0 or delta != 1.0):
            raise ConfigError("--closed-form needs --family t, --theta0 0 and --delta 1")
        if not closed_form and eval_draws < 10:
            raise ConfigError(f"eval_draws must be >= 10, got {eval_draws}")

        rows: list[dict[str, Any]] = []
        label = "closed_form" if closed_form else "plugin"
        echo(f"[blue]>[/blue] Evaluating {label} power on {len(grid)} alternative(s) …")
        if closed_form:
            for value in grid:
                mu, nu, beta = closed_form_approx_t(lam, value, n, alpha)
                rows.append(
                    {"theta_star": value, "mu": mu, "nu": nu, "beta_star": beta, "method": label}
                )
        else:
            moment_model = mean_variance_normal_model(delta)
            phi = power_divergence_phi(lam)
            approx_fn = power_approx_s if family is PowerFamilyOption.s else power_approx_t
            for idx, value in enumerate(grid):
                draws = draw_normal_sample(
                    value, delta, eval_draws, derive_seed(seed, "power", idx)
                )
                approx = approx_fn(
                    moment_model, Sample.from_values(draws), theta0, value, phi, n, alpha
                )
                rows.append(
                    {
                        "theta_star": value,
                        "mu": approx.mu,
                        "nu": approx.nu,
                        "beta_star": approx.beta_star,
                        "method": label,
                    }
                )
        power_path = write_csv(out_dir / "power.csv", pd.DataFrame(rows))
        echo(f"  Power    -> {power_path}")
        manifest_path = _write_manifest(
            out_dir,
            "power",
            created_at,
            started,
            config=settings,
            master_seed=None if closed_form else seed,
            outputs=[power_path],
        )
        echo(f"  Manifest -> {manifest_path}")

        if not quiet:
            table = RichTable(title=f"Approximate power ({label})", show_lines=True)
            for column in ("theta*", "mu", "nu", "beta*"):
                table.add_column(column, justify="right")
            for row in rows:
                table.add_row(
                    _fmt(row["theta_star"]), _fmt(row["mu"]), _fmt(row["nu"]),
                    _fmt(row["beta_star"]),
                )
            console.print(table)
    except typer.Exit:
        raise
    except Exception as exc:
        _fail(
            out_dir, "power", created_at, started, exc,
            config=settings, master_seed=None if closed_form else seed,
        )


# ── simulate command ─────────────────────────────────────────────


@app.command("simulate")
def simulate_cmd(
    config_path: Path = typer.Option(
        ..., "--config", "-c",
        help="Experiment config JSON (snake_case keys; unknown keys rejected).",
    ),
    threads: int | None = typer.Option(
        None, "--threads", "-j",
        help="Worker threads (default: the config's 'threads'). Results do not depend on it.",
        min=1,
    ),
    theta_star: str | None = typer.Option(
        None, "--power-grid",
        help="Also write power_curve.csv over this theta* grid (start:stop:step or list).",
    ),
    out_dir: Path = typer.Option(
        Path("output"), "--out-dir", "-o",
        help="Output directory for sizes.csv, cdf.csv + manifest.json.",
    ),
    quiet: bool = typer.Option(
        False, "--quiet", "-q",
        help="Suppress informational output; still writes all artifacts.",
    ),
) -> None:
    """Run a Monte Carlo size study and write sizes.csv and cdf.csv."""
    echo = _printer(quiet)
    started = time.perf_counter()
    created_at = utcnow_iso()
    out_dir.mkdir(parents=True, exist_ok=True)
    settings: dict[str, Any] = {"config_path": str(config_path), "threads": threads}
    master_seed: int | None = None
    try:
        config = load_experiment_config(config_path)
        settings = {**config.to_dict(), "threads": threads or config.threads}
        master_seed = config.master_seed
        grid = _parse_grid(theta_star) if theta_star is not None else None

        echo(
            f"[blue]>[/blue] Running {config.R} replications "
            f"(n={config.n}, delta={config.delta:g}, theta0={config.theta0:g}) …"
        )
        _, summary = run_experiment(config, threads=threads)
        curve = power_curve(config, grid, threads=threads) if grid is not None else None

        # outputs are written only once every computation has succeeded
        sizes = summary.sizes_frame()
        outputs = [
            write_csv(out_dir / "sizes.csv", sizes),
            write_csv(out_dir / "cdf.csv", summary.cdf_frame()),
        ]
        if curve is not None:
            outputs.append(write_csv(out_dir / "power_curve.csv", curve))
        for path in outputs:
            echo(f"  {path.stem:<11} -> {path}")
        for warning in summary.warnings:
            echo(f"[yellow]![/yellow] {warning}")
        manifest_path = _write_manifest(
            out_dir,
            "simulate",
            created_at,
            started,
            config=settings,
            input_file=config_path,
            master_seed=master_seed,
            outputs=outputs,
        )
        echo(f"  Manifest    -> {manifest_path}")

        if not quiet:
            table = RichTable(title=f"Empirical sizes (alpha={config.alpha:g})", show_lines=True)
            for column in ("family", "lambda", "estimator", "size", "failures"):
                table.add_column(column, justify="right")
            for row in sizes.itertuples(index=False):
                table.add_row(
                    str(row[0]), _fmt(row[1]), str(row[2]), _fmt(row[3]), str(row[4]),
                )
            console.print(table)
    except typer.Exit:
        raise
    except Exception as exc:
        _fail(
            out_dir, "simulate", created_at, started, exc,
            config=settings, input_file=config_path, master_seed=master_seed,
        )


# ── influence command ────────────────────────────────────────────


@app.command("influence")
def influence_cmd(
    data: Path = typer.Option(
        ..., "--data", "-d",
        help="Single-column CSV of observations (optional header 'x').",
    ),
    theta0: float = typer.Option(..., "--theta0", help="Value of theta at which to evaluate."),
    x: float = typer.Option(..., "--x", help="Contamination point."),
    delta: float = typer.Option(1.0, "--delta", help="Working-model delta in E[X^2] = 2θ² + δ."),
    out_dir: Path = typer.Option(
        Path("output"), "--out-dir", "-o",
        help="Output directory for result.json + manifest.json.",
    ),
    quiet: bool = typer.Option(
        False, "--quiet", "-q",
        help="Suppress informational output; still writes all artifacts.",
    ),
) -> None:
    """Influence of a point x on the implied probabilities and the S statistic."""
    echo = _printer(quiet)
    started = time.perf_counter()
    created_at = utcnow_iso()
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = {"theta0": theta0, "x": x, "delta": delta}
    try:
        sample, moment_model = _load(data, delta)
        echo(f"[blue]>[/blue] Evaluating influence at x = {x:g} …")
        report = influence_report(moment_model, sample, theta0, [x])
        result_path = write_json(out_dir / "result.json", report.to_dict())
        echo(f"  Result   -> {result_path}")
        for warning in report.warnings:
            echo(f"[yellow]![/yellow] {warning}")
        manifest_path = _write_manifest(
            out_dir,
            "influence",
            created_at,
            started,
            config=settings,
            input_file=data,
            outputs=[result_path],
        )
        echo(f"  Manifest -> {manifest_path}")

        if not quiet:
            table = RichTable(title=f"Influence at x = {x:g}", show_lines=True)
            table.add_column("Quantity", style="cyan")
            table.add_column("Value", justify="right")
            for method, value in report.rho.items():
                table.add_row(f"rho[{method}]", "pole" if value is None else _fmt(value))
            table.add_row("IF2", _fmt(report.if2))
            console.print(table)
    except typer.Exit:
        raise
    except Exception as exc:
        _fail(out_dir, "influence", created_at, started, exc, config=settings, input_file=data)
