"""Orchestration behind the CLI verbs: problem construction, restoration runs and experiments."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable

from dpps_restore.catalog.presets import PRESETS, Problem, ProblemSource
from dpps_restore.config import EXPERIMENT_NAMES, RunConfig, config_to_dict, logger
from dpps_restore.errors import ConfigError
from dpps_restore.fields import SignalField
from dpps_restore.metrics import mse, psnr
from dpps_restore.sampler import RunTrace, run
from dpps_restore.schedule import NoiseSchedule, make_linear_schedule
from dpps_restore.services import experiment_service
from dpps_restore.services.experiment_service import ExperimentReport
from dpps_restore.services.image_service import (
    read_mask,
    read_reference,
    write_estimate,
    write_json,
    write_report,
    write_trace_csv,
)
from dpps_restore.services.oracle_service import try_restoration_oracle

RESIDUAL_UNITS = "squared L2 norm, signal domain normalized to [0, 1]"


@dataclass(frozen=True, eq=False)
class RestoreResult:
    estimate: SignalField
    trace: RunTrace
    summary: dict[str, Any]
    files: dict[str, Path]


def make_schedule(cfg: RunConfig) -> NoiseSchedule:
    return make_linear_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end, cfg.schedule.variance)


def load_reference(cfg: RunConfig) -> SignalField | None:
    """Reference image or signal; its rank must match the preset, so colour [H, W, 3] is rejected."""
    if cfg.problem.reference is None:
        return None
    x0 = read_reference(cfg.problem.reference)
    expected = PRESETS[cfg.problem.preset].ndim
    if x0.ndim != expected:
        raise ConfigError(
            "problem.reference",
            f"shape {x0.shape} incompatível com o preset '{cfg.problem.preset}', que espera {expected} dimensões "
            "(imagens coloridas não são suportadas; use PGM em tons de cinza).",
        )
    return x0


def problem_source(cfg: RunConfig) -> ProblemSource:
    operator_overrides = None if cfg.operator is None else asdict(cfg.operator)
    mask = None
    if cfg.operator is not None and cfg.operator.mask_path:
        mask = read_mask(cfg.operator.mask_path)
    return ProblemSource(
        preset=cfg.problem.preset,
        sigma_y=cfg.problem.sigma_y,
        size=cfg.problem.size,
        prior_overrides=None if cfg.prior is None else asdict(cfg.prior),
        operator_overrides=operator_overrides,
        x0=load_reference(cfg),
        mask=mask,
    )


def build_run_problem(cfg: RunConfig) -> Problem:
    return problem_source(cfg).build(cfg.problem.seed)


def restore(cfg: RunConfig, out_dir: str | Path | None = None) -> RestoreResult:
    """Runs the configured sampler once and writes the estimate, `trace.csv` and `summary.json`."""
    out_dir = Path(out_dir or cfg.output_dir)
    schedule = make_schedule(cfg)
    sampler_cfg = cfg.sampler_config()
    problem = build_run_problem(cfg)
    oracle = try_restoration_oracle(problem.prior, problem.operator, problem.y, sampler_cfg.sigma_y_assumed)

    logger.info(
        "Restaurando preset=%s variant=%s seed=%s T=%s", problem.name, sampler_cfg.variant.value, sampler_cfg.seed, schedule.T
    )
    started_at = time.perf_counter()
    estimate, trace = run(
        problem.prior,
        problem.operator,
        problem.y,
        schedule,
        sampler_cfg,
        x0_ref=problem.x0,
        oracle_mean=None if oracle is None else oracle.posterior_mean,
        progress=cfg.progress,
    )
    duration_ms = (time.perf_counter() - started_at) * 1000

    summary: dict[str, Any] = {
        "preset": problem.name,
        "variant": sampler_cfg.variant.value,
        "seed": sampler_cfg.seed,
        "problem_seed": problem.seed,
        "T": schedule.T,
        "sigma_y": problem.sigma_y,
        "final_residual": trace.per_step[-1].residual,
        "residual_units": RESIDUAL_UNITS,
        "psnr": psnr(estimate, problem.x0),
        "mse": mse(estimate, problem.x0),
        "duration_ms": duration_ms,
    }
    if oracle is not None:
        summary["oracle_mse"] = mse(estimate, oracle.posterior_mean)

    files = {
        "estimate": write_estimate(out_dir, estimate),
        "trace": write_trace_csv(out_dir / "trace.csv", trace),
        "summary": write_json(out_dir / "summary.json", {**summary, "config": config_to_dict(cfg)}),
    }
    logger.info("Restauração concluída: residual_final=%.6g psnr=%.4g dB", summary["final_residual"], summary["psnr"])
    return RestoreResult(estimate=estimate, trace=trace, summary=summary, files=files)


def _variance(cfg: RunConfig, source: ProblemSource, schedule: NoiseSchedule) -> ExperimentReport:
    del source
    experiment = cfg.experiment
    fixture_source = ProblemSource(experiment.fixture_preset, sigma_y=cfg.problem.sigma_y)
    t = max(1, round(experiment.t_fraction * schedule.T))
    return experiment_service.variance_stability(
        fixture_source, schedule, experiment.N, experiment.M, experiment.master_seeds, t
    )


def _convergence(cfg: RunConfig, source: ProblemSource, schedule: NoiseSchedule) -> ExperimentReport:
    experiment = cfg.experiment
    return experiment_service.convergence_experiment(
        source, schedule, experiment.variants, experiment.seeds, cfg.sampler_config(), cfg.progress
    )


def _lambda_sweep(cfg: RunConfig, source: ProblemSource, schedule: NoiseSchedule) -> ExperimentReport:
    experiment = cfg.experiment
    return experiment_service.lambda_sweep(
        source, schedule, experiment.step_scales, experiment.variants, experiment.seeds, cfg.sampler_config(), cfg.progress
    )


def _error_accumulation(cfg: RunConfig, source: ProblemSource, schedule: NoiseSchedule) -> ExperimentReport:
    experiment = cfg.experiment
    return experiment_service.error_accumulation_trace(
        source, schedule, experiment.variants, experiment.seeds, cfg.sampler_config(), cfg.progress
    )


def _candidate_sweep(cfg: RunConfig, source: ProblemSource, schedule: NoiseSchedule) -> ExperimentReport:
    experiment = cfg.experiment
    return experiment_service.candidate_count_sweep(
        source, schedule, experiment.n_values, experiment.seeds, cfg.sampler_config(), progress=cfg.progress
    )


def _noise_sweep(cfg: RunConfig, source: ProblemSource, schedule: NoiseSchedule) -> ExperimentReport:
    experiment = cfg.experiment
    return experiment_service.noise_level_sweep(
        source, schedule, experiment.sigma_levels, experiment.variants, experiment.seeds, cfg.sampler_config(), cfg.progress
    )


def _overhead(cfg: RunConfig, source: ProblemSource, schedule: NoiseSchedule) -> ExperimentReport:
    experiment = cfg.experiment
    return experiment_service.overhead_report(
        source, schedule, experiment.n_values, experiment.seeds, cfg.sampler_config(), cfg.progress
    )


_EXPERIMENTS: dict[str, Callable[[RunConfig, ProblemSource, NoiseSchedule], ExperimentReport]] = {
    "variance": _variance,
    "convergence": _convergence,
    "lambda-sweep": _lambda_sweep,
    "error-accum": _error_accumulation,
    "candidate-sweep": _candidate_sweep,
    "noise-sweep": _noise_sweep,
    "overhead": _overhead,
}


def run_experiment(name: str, cfg: RunConfig, out_dir: str | Path | None = None) -> ExperimentReport:
    if name not in _EXPERIMENTS:
        raise ConfigError("experiment", f"experimento '{name}' desconhecido. Opções: {list(EXPERIMENT_NAMES)}.")
    logger.info("Iniciando experimento '%s' (preset=%s).", name, cfg.problem.preset)
    report = _EXPERIMENTS[name](cfg, problem_source(cfg), make_schedule(cfg))
    report.config = {**report.config, "run_config": config_to_dict(cfg)}
    write_report(report, Path(out_dir or cfg.output_dir))
    return report
