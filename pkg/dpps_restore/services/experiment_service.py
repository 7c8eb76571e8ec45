"""
Experiment drivers: candidate-distance variance ordering, convergence curves, step-scale
robustness, error accumulation, candidate-count and noise-level ablations and the overhead
report. Every driver returns an ExperimentReport whose aggregates are recomputable from its
per-seed table.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from dpps_restore.catalog.presets import Problem, ProblemSource
from dpps_restore.config import logger
from dpps_restore.errors import InvalidRangeError
from dpps_restore.fields import SignalField
from dpps_restore.metrics import mse, psnr
from dpps_restore.operators import LinearOperator
from dpps_restore.priors import PriorModel
from dpps_restore.sampler import (
    RunTrace,
    SamplerConfig,
    SamplerVariant,
    candidate_distance,
    guided_mean,
    run,
)
from dpps_restore.schedule import NoiseSchedule, ddim_coefficients, forward_sample
from dpps_restore.services.oracle_service import try_restoration_oracle

MIN_CONVERGENCE_SEEDS = 5
MIN_SWEEP_SCALES = 3
MONOTONE_TOLERANCE = 0.05
ADAPTIVE_LABEL = "adaptive"
_FIXTURE_STREAM = 7


@dataclass
class ExperimentReport:
    name: str
    config: dict[str, Any]
    per_seed: list[dict[str, Any]]
    group_by: tuple[str, ...] = ()
    metrics: tuple[str, ...] = ()
    aggregates: list[dict[str, Any]] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    curves: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    trace_files: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.aggregates:
            self.aggregates = self.recompute_aggregates()

    def recompute_aggregates(self) -> list[dict[str, Any]]:
        return aggregate_rows(self.per_seed, self.group_by, self.metrics)

    def aggregate(self, metric: str, statistic: str = "mean", **group: Any) -> float:
        for row in self.aggregates:
            if all(row.get(key) == value for key, value in group.items()):
                return float(row[f"{metric}_{statistic}"])
        raise KeyError(f"Grupo {group} não encontrado no relatório '{self.name}'.")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "config": self.config,
            "summary": self.summary,
            "aggregates": self.aggregates,
            "per_seed": self.per_seed,
            "trace_files": self.trace_files,
        }


def aggregate_rows(
    rows: Sequence[dict[str, Any]], group_by: Sequence[str], metrics: Sequence[str]
) -> list[dict[str, Any]]:
    """Mean, sample std and sample variance per group, groups in order of first appearance."""
    groups: dict[tuple[Any, ...], list[dict[str, Any]]] = {}
    for row in rows:
        groups.setdefault(tuple(row[key] for key in group_by), []).append(row)

    aggregates = []
    for key, members in groups.items():
        entry: dict[str, Any] = dict(zip(group_by, key))
        entry["count"] = len(members)
        for metric in metrics:
            values = np.array([member[metric] for member in members], dtype=np.float64)
            variance = float(np.var(values, ddof=1)) if values.size > 1 else 0.0
            entry[f"{metric}_mean"] = float(np.mean(values))
            entry[f"{metric}_std"] = float(np.sqrt(variance))
            entry[f"{metric}_var"] = variance
        aggregates.append(entry)
    return aggregates


def paired_differences(
    rows: Sequence[dict[str, Any]], key: str, treatment: Any, baseline: Any, metric: str, pair_on: str = "seed"
) -> list[float]:
    """treatment - baseline for every `pair_on` value present in both arms."""
    baseline_values = {row[pair_on]: row[metric] for row in rows if row[key] == baseline}
    return [
        float(row[metric] - baseline_values[row[pair_on]])
        for row in rows
        if row[key] == treatment and row[pair_on] in baseline_values
    ]


@dataclass(frozen=True, eq=False)
class _PreparedProblem:
    problem: Problem
    oracle_mean: SignalField | None


def _prepare(source: ProblemSource, seed: int, sigma_y_assumed: float, sigma_y: float | None = None) -> _PreparedProblem:
    problem = source.build(seed, sigma_y=sigma_y)
    oracle = try_restoration_oracle(problem.prior, problem.operator, problem.y, sigma_y_assumed)
    return _PreparedProblem(problem, None if oracle is None else oracle.posterior_mean)


def _run_cell(
    prepared: _PreparedProblem, s: NoiseSchedule, cfg: SamplerConfig, progress: bool
) -> tuple[RunTrace, dict[str, float]]:
    problem = prepared.problem
    started_at = time.perf_counter()
    estimate, trace = run(
        problem.prior, problem.operator, problem.y, s, cfg, x0_ref=problem.x0, oracle_mean=prepared.oracle_mean, progress=progress
    )
    duration_ms = (time.perf_counter() - started_at) * 1000
    metrics = {
        "final_residual": trace.per_step[-1].residual,
        "oracle_mse": float("nan") if prepared.oracle_mean is None else mse(estimate, prepared.oracle_mean),
        "mse": mse(estimate, problem.x0),
        "psnr": psnr(estimate, problem.x0),
        "duration_ms": duration_ms,
    }
    logger.info(
        "Célula concluída (variant=%s, n=%s, step_scale=%s, seed=%s, oracle_mse=%.6g, duration_ms=%.2f)",
        cfg.variant.value,
        cfg.n_candidates,
        cfg.step_scale,
        cfg.seed,
        metrics["oracle_mse"],
        duration_ms,
    )
    return trace, metrics


def _error_metric(rows: Sequence[dict[str, Any]]) -> str:
    return "oracle_mse" if all(np.isfinite(row["oracle_mse"]) for row in rows) else "mse"


def _final_half(trace: RunTrace, s: NoiseSchedule) -> np.ndarray:
    return np.array([record.t <= s.T // 2 for record in trace.per_step])


@dataclass(frozen=True, eq=False)
class VarianceFixture:
    x_t: SignalField
    t: int
    y: SignalField


def make_variance_fixture(problem: Problem, s: NoiseSchedule, t: int, seed: int) -> VarianceFixture:
    x_t = forward_sample(s, problem.x0, t, np.random.default_rng([int(seed), _FIXTURE_STREAM]))
    return VarianceFixture(x_t=x_t, t=int(t), y=problem.y)


def variance_experiment(
    p: PriorModel,
    A: LinearOperator,
    fixture: VarianceFixture,
    N: int,  # pylint: disable=invalid-name
    M: int,  # pylint: disable=invalid-name
    seed: int,
    s: NoiseSchedule,
    step_scale: float = 0.0,
) -> ExperimentReport:
    """
    M trials of N candidate distances f(z) at a fixed (x_t, t, y): the first draw (single random
    sample), the mean of the N values (Monte Carlo average) and their minimum (proximal selection).
    """
    if N < 1:
        raise InvalidRangeError(f"N deve ser >= 1 (recebido {N}).")
    if M < 2:
        raise InvalidRangeError(f"M deve ser >= 2 (recebido {M}).")
    t = fixture.t
    mu = guided_mean(p, fixture.x_t, t, s, fixture.y, A, step_scale)
    sigma_t = s.sigma(t)
    c1, c2 = ddim_coefficients(s, t)

    rows = []
    for trial in range(M):
        rng = np.random.default_rng([int(seed), trial])
        values = np.array(
            [
                candidate_distance(mu, rng.standard_normal(mu.shape), sigma_t, fixture.x_t, fixture.y, A, c1, c2)
                for _ in range(N)
            ]
        )
        rows.append({"trial": trial, "single": float(values[0]), "mean": float(values.mean()), "min": float(values.min())})

    report = ExperimentReport(
        name="variance",
        config={"N": N, "M": M, "seed": seed, "t": t, "sigma_t": sigma_t, "step_scale": step_scale},
        per_seed=rows,
        metrics=("single", "mean", "min"),
    )
    report.summary = _variance_verdict(report, N)
    return report


def _variance_verdict(report: ExperimentReport, N: int) -> dict[str, Any]:  # pylint: disable=invalid-name
    var_single = report.aggregate("single", "var")
    var_mean = report.aggregate("mean", "var")
    var_min = report.aggregate("min", "var")
    ratio = var_mean / var_single if var_single > 0.0 else float("nan")
    return {
        "var_single": var_single,
        "var_mean": var_mean,
        "var_min": var_min,
        "mean_ratio": ratio,
        "expected_ratio": 1.0 / N,
        "ordering_holds": bool(var_single > var_mean > var_min),
    }


def variance_stability(
    source: ProblemSource,
    s: NoiseSchedule,
    N: int,  # pylint: disable=invalid-name
    M: int,  # pylint: disable=invalid-name
    master_seeds: Sequence[int],
    t: int,
    step_scale: float = 0.0,
) -> ExperimentReport:
    """Repeats the variance experiment on an independent fixture per master seed."""
    rows = []
    for master_seed in master_seeds:
        problem = source.build(master_seed)
        fixture = make_variance_fixture(problem, s, t, master_seed)
        verdict = variance_experiment(problem.prior, problem.operator, fixture, N, M, master_seed, s, step_scale).summary
        rows.append({"master_seed": int(master_seed), **verdict})
        logger.info(
            "Variância (master_seed=%s): single=%.6g mean=%.6g min=%.6g ordering_holds=%s",
            master_seed,
            verdict["var_single"],
            verdict["var_mean"],
            verdict["var_min"],
            verdict["ordering_holds"],
        )

    report = ExperimentReport(
        name="variance",
        config={"preset": source.preset, "N": N, "M": M, "t": t, "master_seeds": list(master_seeds), "step_scale": step_scale},
        per_seed=rows,
        metrics=("var_single", "var_mean", "var_min", "mean_ratio"),
    )
    report.summary = {
        "ordering_holds": all(row["ordering_holds"] for row in rows),
        "ratio_within_band": all(0.75 / N <= row["mean_ratio"] <= 1.25 / N for row in rows),
        "ordering_by_seed": {str(row["master_seed"]): row["ordering_holds"] for row in rows},
    }
    return report


def variant_config(base: SamplerConfig, variant: SamplerVariant | str, seed: int, **overrides: Any) -> SamplerConfig:
    return replace(base, variant=SamplerVariant(variant), seed=int(seed), **overrides).validate()


def _mean_curve(traces: Sequence[RunTrace], column: str) -> np.ndarray:
    return np.mean(np.stack([trace.column(column) for trace in traces]), axis=0)


def convergence_experiment(
    source: ProblemSource,
    s: NoiseSchedule,
    variants: Sequence[SamplerVariant | str],
    seeds: Sequence[int],
    base_cfg: SamplerConfig,
    progress: bool = False,
) -> ExperimentReport:
    """
    Seed-averaged per-timestep curves of the measurement residual ||y - A x0_hat||^2, the
    oracle MSE and PSNR of x0_hat, and the guided-mean error against sqrt(abar_{t-1}) x0.
    """
    if len(seeds) < MIN_CONVERGENCE_SEEDS:
        logger.warning("convergence com %s seeds (< %s): curvas ruidosas.", len(seeds), MIN_CONVERGENCE_SEEDS)
    variants = [SamplerVariant(variant) for variant in variants]
    prepared = {seed: _prepare(source, seed, base_cfg.sigma_y_assumed) for seed in seeds}

    rows: list[dict[str, Any]] = []
    curves: dict[SamplerVariant, dict[str, np.ndarray]] = {}
    timesteps: np.ndarray | None = None
    for variant in variants:
        traces = []
        for seed in seeds:
            trace, metrics = _run_cell(prepared[seed], s, variant_config(base_cfg, variant, seed), progress)
            traces.append(trace)
            rows.append({"variant": variant.value, "seed": int(seed), **metrics})
        timesteps = np.array(traces[0].timesteps)
        curves[variant] = {
            column: _mean_curve(traces, column) for column in ("residual", "oracle_mse", "reference_psnr", "mu_error_ref")
        }

    curve_rows = [
        {"variant": variant.value, "t": int(t), **{column: float(values[index]) for column, values in columns.items()}}
        for variant, columns in curves.items()
        for index, t in enumerate(timesteps)
    ]
    report = ExperimentReport(
        name="convergence",
        config={"preset": source.preset, "variants": [variant.value for variant in variants], "seeds": list(seeds)},
        per_seed=rows,
        group_by=("variant",),
        metrics=("final_residual", "oracle_mse", "mse", "psnr"),
        curves={"convergence": curve_rows},
    )

    dominance = {}
    if SamplerVariant.DPS_RANDOM in curves:
        final_half = timesteps <= s.T // 2
        baseline = curves[SamplerVariant.DPS_RANDOM]["residual"][final_half]
        for variant, columns in curves.items():
            if variant is not SamplerVariant.DPS_RANDOM:
                dominance[variant.value] = float(np.mean(columns["residual"][final_half] <= baseline))
    report.summary = {"residual_dominance_vs_dps": dominance}
    return report


def lambda_sweep(
    source: ProblemSource,
    s: NoiseSchedule,
    step_scales: Sequence[float],
    variants: Sequence[SamplerVariant | str],
    seeds: Sequence[int],
    base_cfg: SamplerConfig,
    progress: bool = False,
) -> ExperimentReport:
    """Final error over a (variant x step_scale) grid; the spread across scales measures robustness."""
    if len(step_scales) < MIN_SWEEP_SCALES:
        logger.warning("lambda-sweep com %s valores de step_scale (< %s).", len(step_scales), MIN_SWEEP_SCALES)
    variants = [SamplerVariant(variant) for variant in variants]
    prepared = {seed: _prepare(source, seed, base_cfg.sigma_y_assumed) for seed in seeds}

    rows = []
    for variant in variants:
        for step_scale in step_scales:
            for seed in seeds:
                cfg = variant_config(base_cfg, variant, seed, step_scale=float(step_scale))
                _, metrics = _run_cell(prepared[seed], s, cfg, progress)
                rows.append({"variant": variant.value, "step_scale": float(step_scale), "seed": int(seed), **metrics})

    report = ExperimentReport(
        name="lambda-sweep",
        config={
            "preset": source.preset,
            "variants": [variant.value for variant in variants],
            "step_scales": [float(scale) for scale in step_scales],
            "seeds": list(seeds),
        },
        per_seed=rows,
        group_by=("variant", "step_scale"),
        metrics=("final_residual", "oracle_mse", "mse", "psnr"),
    )
    metric = _error_metric(rows)
    spreads = {}
    for variant in variants:
        means = [report.aggregate(metric, variant=variant.value, step_scale=float(scale)) for scale in step_scales]
        spreads[variant.value] = float(max(means) - min(means))
    report.summary = {"metric": metric, "spread": spreads}
    return report


def error_accumulation_trace(
    source: ProblemSource,
    s: NoiseSchedule,
    variants: Sequence[SamplerVariant | str],
    seeds: Sequence[int],
    base_cfg: SamplerConfig,
    progress: bool = False,
) -> ExperimentReport:
    """Seed-averaged ||sqrt(abar_{t-1}) x0 - mu||_F per timestep for each variant."""
    variants = [SamplerVariant(variant) for variant in variants]
    prepared = {seed: _prepare(source, seed, base_cfg.sigma_y_assumed) for seed in seeds}

    rows = []
    curve_rows = []
    final_half_means = {}
    for variant in variants:
        traces = []
        for seed in seeds:
            trace, _ = _run_cell(prepared[seed], s, variant_config(base_cfg, variant, seed), progress)
            traces.append(trace)
            errors = trace.column("mu_error_ref")
            rows.append(
                {
                    "variant": variant.value,
                    "seed": int(seed),
                    "final_half_mu_error": float(np.mean(errors[_final_half(trace, s)])),
                    "final_mu_error": float(errors[-1]),
                }
            )
        mean_errors = _mean_curve(traces, "mu_error_ref")
        curve_rows.extend(
            {"variant": variant.value, "t": int(t), "mu_error_ref": float(error)}
            for t, error in zip(traces[0].timesteps, mean_errors)
        )
        final_half_means[variant.value] = float(np.mean(mean_errors[_final_half(traces[0], s)]))

    report = ExperimentReport(
        name="error-accum",
        config={"preset": source.preset, "variants": [variant.value for variant in variants], "seeds": list(seeds)},
        per_seed=rows,
        group_by=("variant",),
        metrics=("final_half_mu_error", "final_mu_error"),
        curves={"error_accumulation": curve_rows},
    )
    report.summary = {"final_half_mean_mu_error": final_half_means}
    return report


def _count_label(count: int | str) -> str:
    return str(count)


def _count_config(base: SamplerConfig, count: int | str, seed: int) -> SamplerConfig:
    if count == ADAPTIVE_LABEL:
        return variant_config(base, SamplerVariant.DPPS_ADAPTIVE, seed)
    if int(count) == 1:
        return variant_config(base, SamplerVariant.DPS_RANDOM, seed, n_candidates=1)
    return variant_config(base, SamplerVariant.DPPS_FIXED_N, seed, n_candidates=int(count))


def candidate_count_sweep(
    source: ProblemSource,
    s: NoiseSchedule,
    n_values: Sequence[int],
    seeds: Sequence[int],
    base_cfg: SamplerConfig,
    include_adaptive: bool = True,
    progress: bool = False,
) -> ExperimentReport:
    """Final error per candidate count (n = 1 is plain DPS), plus the adaptive schedule."""
    counts: list[int | str] = [int(count) for count in n_values] + ([ADAPTIVE_LABEL] if include_adaptive else [])
    prepared = {seed: _prepare(source, seed, base_cfg.sigma_y_assumed) for seed in seeds}

    rows = []
    for count in counts:
        for seed in seeds:
            _, metrics = _run_cell(prepared[seed], s, _count_config(base_cfg, count, seed), progress)
            rows.append({"n": _count_label(count), "seed": int(seed), **metrics})

    report = ExperimentReport(
        name="candidate-sweep",
        config={"preset": source.preset, "n_values": [int(count) for count in n_values], "seeds": list(seeds)},
        per_seed=rows,
        group_by=("n",),
        metrics=("final_residual", "oracle_mse", "mse", "psnr"),
    )
    metric = _error_metric(rows)
    fixed_means = [report.aggregate(metric, n=_count_label(count)) for count in sorted(int(count) for count in n_values)]
    report.summary = {
        "metric": metric,
        "means": {_count_label(count): report.aggregate(metric, n=_count_label(count)) for count in counts},
        "non_increasing": all(
            later <= earlier * (1.0 + MONOTONE_TOLERANCE) for earlier, later in zip(fixed_means, fixed_means[1:])
        ),
    }
    return report


def noise_level_sweep(
    source: ProblemSource,
    s: NoiseSchedule,
    sigma_levels: Sequence[float],
    variants: Sequence[SamplerVariant | str],
    seeds: Sequence[int],
    base_cfg: SamplerConfig,
    progress: bool = False,
) -> ExperimentReport:
    """Final error per measurement-noise level; the oracle assumes the level actually used."""
    variants = [SamplerVariant(variant) for variant in variants]
    rows = []
    for level in sigma_levels:
        prepared = {seed: _prepare(source, seed, float(level), sigma_y=float(level)) for seed in seeds}
        for variant in variants:
            for seed in seeds:
                cfg = variant_config(base_cfg, variant, seed, sigma_y_assumed=float(level))
                _, metrics = _run_cell(prepared[seed], s, cfg, progress)
                rows.append({"sigma_y": float(level), "variant": variant.value, "seed": int(seed), **metrics})

    report = ExperimentReport(
        name="noise-sweep",
        config={
            "preset": source.preset,
            "sigma_levels": [float(level) for level in sigma_levels],
            "variants": [variant.value for variant in variants],
            "seeds": list(seeds),
        },
        per_seed=rows,
        group_by=("sigma_y", "variant"),
        metrics=("final_residual", "oracle_mse", "mse", "psnr"),
    )
    report.summary = {"metric": _error_metric(rows)}
    return report


def overhead_report(
    source: ProblemSource,
    s: NoiseSchedule,
    n_values: Sequence[int],
    seeds: Sequence[int],
    base_cfg: SamplerConfig,
    progress: bool = False,
) -> ExperimentReport:
    """Wall-clock per run for each candidate count; reported, never asserted."""
    prepared = {seed: _prepare(source, seed, base_cfg.sigma_y_assumed) for seed in seeds}
    rows = []
    for count in n_values:
        for seed in seeds:
            _, metrics = _run_cell(prepared[seed], s, _count_config(base_cfg, int(count), seed), progress)
            rows.append({"n": _count_label(count), "seed": int(seed), "duration_ms": metrics["duration_ms"]})

    report = ExperimentReport(
        name="overhead",
        config={"preset": source.preset, "n_values": [int(count) for count in n_values], "seeds": list(seeds)},
        per_seed=rows,
        group_by=("n",),
        metrics=("duration_ms",),
    )
    reference = _count_label(min(int(count) for count in n_values))
    reference_ms = report.aggregate("duration_ms", n=reference)
    report.summary = {
        "reference_n": reference,
        "mean_duration_ms": {_count_label(count): report.aggregate("duration_ms", n=_count_label(count)) for count in n_values},
        "relative_growth": {
            _count_label(count): report.aggregate("duration_ms", n=_count_label(count)) / reference_ms - 1.0
            for count in n_values
        },
    }
    return report
