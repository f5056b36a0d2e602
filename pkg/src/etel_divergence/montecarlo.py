"""Replication engine: null sizes, CDFs and power curves of the divergence tests."""

from __future__ import annotations

import dataclasses
import logging
from collections import Counter
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from scipy import stats

from etel_divergence.asymptotics import (
    closed_form_power_t,
    power_approx_s,
    power_approx_t,
)
from etel_divergence.config import ExperimentConfig
from etel_divergence.divergence import PhiFunction, kullback_phi, power_divergence_phi
from etel_divergence.errors import (
    DivergenceError,
    EmptyValues,
    EtelError,
    ModelError,
    NumericalError,
)
from etel_divergence.estimators import estimate
from etel_divergence.inference import chi2_quantile, compute_statistic, null_tilt
from etel_divergence.misspec import misspec_fit, misspec_power, misspec_sandwich
from etel_divergence.models import Family, Method
from etel_divergence.moments import MomentModel, Sample, mean_variance_normal_model
from etel_divergence.rng import derive_seed

logger = logging.getLogger(__name__)

FAILURE_WARN_RATE = 0.01
UNIFORM_CLIP = 1e-16

SeriesKey = tuple[Family, float | None, Method]


def series_label(key: SeriesKey) -> str:
    family, lam, method = key
    if lam is None:
        return f"{family.value.lower()}_{method.value.lower()}"
    return f"{family.value.lower()}_lambda={lam:g}_{method.value.lower()}"


def series_keys(config: ExperimentConfig) -> list[SeriesKey]:
    """Every (family, lambda, estimator) combination in output order."""
    keys: list[SeriesKey] = []
    for family in config.families:
        lams: Sequence[float | None] = (None,) if family is Family.G2 else config.lambdas
        for lam in lams:
            for method in config.estimators:
                keys.append((family, lam, method))
    return keys


# ── Data generation ──────────────────────────────────────────────


def draw_normal_sample(theta: float, delta: float, n: int, seed: int) -> np.ndarray:
    """``n`` draws from ``N(theta, theta^2 + delta)`` by inverse-CDF of PCG64 uniforms."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    u = np.clip(rng.random(int(n)), UNIFORM_CLIP, 1.0 - UNIFORM_CLIP)
    scale = np.sqrt(float(theta) ** 2 + float(delta))
    return float(theta) + scale * stats.norm.ppf(u)


# ── Records and summaries ────────────────────────────────────────


@dataclass
class ReplicationRecord:
    index: int
    theta_hat: dict[Method, float | None] = field(default_factory=dict)
    statistics: dict[SeriesKey, float | None] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return bool(self.failures)


@dataclass(frozen=True)
class SummaryTable:
    """Reduced output of :func:`run_experiment`.

    ``estimator_cdf`` is the CDF of ``sqrt(n) (theta_hat - theta_true)``.
    """

    grid: tuple[float, ...]
    sizes: dict[SeriesKey, float]
    size_failures: dict[SeriesKey, int]
    estimator_cdf: dict[Method, list[float]]
    statistic_cdf: dict[SeriesKey, list[float]]
    failure_counts: dict[str, int]
    replications: int
    warnings: tuple[str, ...] = ()

    def sizes_frame(self) -> pd.DataFrame:
        rows = []
        for key, size in self.sizes.items():
            family, lam, method = key
            rows.append(
                {
                    "family": family.value.lower(),
                    "lambda": lam,
                    "estimator": method.value.lower(),
                    "size": size,
                    "failures": self.size_failures[key],
                }
            )
        return pd.DataFrame(rows, columns=["family", "lambda", "estimator", "size", "failures"])

    def cdf_frame(self) -> pd.DataFrame:
        data: dict[str, Any] = {"grid": list(self.grid)}
        for method, values in self.estimator_cdf.items():
            data[f"theta_hat_{method.value.lower()}"] = values
        for key, values in self.statistic_cdf.items():
            data[series_label(key)] = values
        return pd.DataFrame(data)


def empirical_cdf(values: Iterable[float], grid: Sequence[float]) -> list[float]:
    """``#(values <= g) / count`` at every grid point."""
    arr = np.sort(np.asarray(list(values), dtype=float))
    if arr.size == 0:
        raise EmptyValues("empirical_cdf needs at least one value")
    points = np.asarray(grid, dtype=float)
    if np.any(np.diff(points) < 0):
        raise ValueError("grid must be sorted ascending")
    return (np.searchsorted(arr, points, side="right") / arr.size).tolist()


def empirical_size(values: Iterable[float], critical: float) -> float:
    """Share of ``values`` strictly above ``critical``."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise EmptyValues("empirical_size needs at least one statistic")
    return float(np.mean(arr > critical))


# ── Replications ─────────────────────────────────────────────────


def _phi_for(family: Family, lam: float | None) -> PhiFunction:
    if family is Family.G2 or lam is None:
        return kullback_phi()
    return power_divergence_phi(lam)


def run_replication(
    config: ExperimentConfig, index: int, model: MomentModel
) -> ReplicationRecord:
    """Draw sample ``index`` and evaluate every requested estimator and statistic."""
    seed = derive_seed(config.master_seed, index)
    sample = Sample.from_values(
        draw_normal_sample(config.theta_true, config.delta, config.n, seed)
    )
    record = ReplicationRecord(index=index)
    keys = series_keys(config)
    opts = config.solver
    for method in config.estimators:
        own = [k for k in keys if k[2] is method]
        try:
            est = estimate(method, model, sample, None, opts)
            reference = null_tilt(method, model, sample, config.theta0, opts)
        except (NumericalError, ModelError) as exc:
            record.theta_hat[method] = None
            record.failures[method.value] = type(exc).__name__
            for key in own:
                record.statistics[key] = None
            continue
        record.theta_hat[method] = float(est.theta_hat[0])
        for key in own:
            family, lam, _ = key
            try:
                value = compute_statistic(
                    family,
                    model,
                    sample,
                    config.theta0,
                    _phi_for(family, lam),
                    est,
                    reference=reference,
                    opts=opts,
                )
            except (NumericalError, DivergenceError) as exc:
                record.failures[series_label(key)] = type(exc).__name__
                value = None
            if value is not None and not np.isfinite(value):
                record.failures[series_label(key)] = "NonFiniteStatistic"
                value = None
            record.statistics[key] = value
    return record


def summarize(records: Sequence[ReplicationRecord], config: ExperimentConfig) -> SummaryTable:
    """Order-deterministic reduction; failed values leave the denominators."""
    ordered = sorted(records, key=lambda rec: rec.index)
    critical = chi2_quantile(1.0 - config.alpha, 1)
    grid = config.cdf_grid
    warnings: list[str] = []

    sizes: dict[SeriesKey, float] = {}
    size_failures: dict[SeriesKey, int] = {}
    statistic_cdf: dict[SeriesKey, list[float]] = {}
    for key in series_keys(config):
        values = [rec.statistics.get(key) for rec in ordered]
        kept = [v for v in values if v is not None]
        size_failures[key] = len(values) - len(kept)
        if not kept:
            sizes[key] = float("nan")
            statistic_cdf[key] = [float("nan")] * len(grid)
            warnings.append(f"{series_label(key)}: every replication failed")
            continue
        sizes[key] = empirical_size(kept, critical)
        statistic_cdf[key] = empirical_cdf(kept, grid)

    estimator_cdf: dict[Method, list[float]] = {}
    root_n = np.sqrt(config.n)
    for method in config.estimators:
        hats = [rec.theta_hat.get(method) for rec in ordered]
        scaled = [root_n * (h - config.theta_true) for h in hats if h is not None]
        estimator_cdf[method] = (
            empirical_cdf(scaled, grid) if scaled else [float("nan")] * len(grid)
        )

    failure_counts: Counter[str] = Counter()
    for rec in ordered:
        failure_counts.update(rec.failures.values())
    failed = sum(1 for rec in ordered if rec.failed)
    if ordered and failed / len(ordered) > FAILURE_WARN_RATE:
        message = (
            f"{failed} of {len(ordered)} replications had failures "
            f"({100.0 * failed / len(ordered):.1f}% > {100 * FAILURE_WARN_RATE:g}%)"
        )
        logger.warning("%s", message)
        warnings.append(message)

    return SummaryTable(
        grid=tuple(grid),
        sizes=sizes,
        size_failures=size_failures,
        estimator_cdf=estimator_cdf,
        statistic_cdf=statistic_cdf,
        failure_counts=dict(sorted(failure_counts.items())),
        replications=len(ordered),
        warnings=tuple(warnings),
    )


def run_experiment(
    config: ExperimentConfig, *, threads: int | None = None
) -> tuple[list[ReplicationRecord], SummaryTable]:
    """Run ``config.R`` replications and reduce them in index order."""
    workers = int(threads or config.threads)
    model = mean_variance_normal_model(config.model_delta)
    indices = range(config.replications)
    logger.info(
        "running %d replications (n=%d, delta=%g, theta_true=%g) on %d thread(s)",
        config.replications,
        config.n,
        config.delta,
        config.theta_true,
        workers,
    )
    if workers <= 1:
        records = _collect((run_replication(config, i, model) for i in indices), len(indices))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(lambda i: run_replication(config, i, model), indices)
            records = _collect(results, len(indices))
    return records, summarize(records, config)


def _collect(results: Iterable[ReplicationRecord], total: int) -> list[ReplicationRecord]:
    step = max(total // 10, 1)
    records: list[ReplicationRecord] = []
    for done, record in enumerate(results, start=1):
        records.append(record)
        if done % step == 0 or done == total:
            logger.info("replications done: %d/%d", done, total)
    return records


# ── Power curves ─────────────────────────────────────────────────


def _plugin_power(
    config: ExperimentConfig,
    key: SeriesKey,
    theta_star: float,
    sample: Sample,
    model: MomentModel,
    misspec_cache: dict[str, Any],
) -> float:
    family, lam, _ = key
    f = _phi_for(family, lam)
    if config.delta == config.model_delta:
        approx_fn = power_approx_s if family is Family.S else power_approx_t
        approx = approx_fn(
            model,
            sample,
            config.theta0,
            theta_star,
            f,
            config.n,
            config.alpha,
            opts=config.solver,
        )
        return approx.beta_star

    if "law" not in misspec_cache:
        est = estimate(Method.ETEL, model, sample, None, config.solver)
        beta = misspec_fit(model, sample, est, config.solver)
        misspec_cache["beta"] = beta
        misspec_cache["law"] = misspec_sandwich(model, sample, beta)
    law = misspec_power(
        family,
        model,
        sample,
        config.theta0,
        misspec_cache["beta"],
        f,
        config.n,
        config.alpha,
        law=misspec_cache["law"],
        opts=config.solver,
    )
    return float(law.beta_star) if law.beta_star is not None else float("nan")


def power_curve(
    config: ExperimentConfig,
    theta_star_grid: Sequence[float],
    *,
    threads: int | None = None,
) -> pd.DataFrame:
    """Simulated rejection rates next to the plug-in and closed-form ``beta*``.

    The analytic columns describe the ETEL estimator; other estimators get
    the simulated column only. ``theta_star`` plays the role of the true
    value of the data-generating law.
    """
    grid = [float(v) for v in theta_star_grid]
    if not grid:
        raise ValueError("theta_star_grid must not be empty")
    model = mean_variance_normal_model(config.model_delta)
    closed_form_ok = config.delta == 1.0 and config.model_delta == 1.0 and config.theta0 == 0.0
    rows: list[dict[str, Any]] = []
    for idx, theta_star in enumerate(grid):
        _, summary = run_experiment(
            dataclasses.replace(config, theta_true=theta_star), threads=threads
        )
        eval_sample = Sample.from_values(
            draw_normal_sample(
                theta_star,
                config.delta,
                config.power_eval_n,
                derive_seed(config.master_seed, "power", idx),
            )
        )
        cache: dict[str, Any] = {}
        for key in series_keys(config):
            family, lam, method = key
            plugin = float("nan")
            closed = float("nan")
            if method is Method.ETEL:
                try:
                    plugin = _plugin_power(config, key, theta_star, eval_sample, model, cache)
                except (EtelError, ArithmeticError) as exc:
                    logger.warning(
                        "plug-in power failed for %s at theta*=%g: %s",
                        series_label(key),
                        theta_star,
                        exc,
                    )
                if closed_form_ok and family in (Family.T, Family.G2):
                    try:
                        closed = closed_form_power_t(
                            0.0 if lam is None else lam, theta_star, config.n, config.alpha
                        )
                    except DivergenceError as exc:
                        logger.warning("closed form unavailable at theta*=%g: %s", theta_star, exc)
            rows.append(
                {
                    "theta_star": theta_star,
                    "family": family.value.lower(),
                    "lambda": lam,
                    "estimator": method.value.lower(),
                    "simulated": summary.sizes[key],
                    "beta_star_plugin": plugin,
                    "beta_star_closed_form": closed,
                    "failures": summary.size_failures[key],
                }
            )
    return pd.DataFrame(rows)
