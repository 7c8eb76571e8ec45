"""
Reverse-process engines: DPS guided sampling, proximal candidate selection (fixed and adaptive
candidate counts), the DDIM-deterministic and Monte Carlo average baselines, and aligned
initialization.
"""
from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from tqdm import tqdm

from dpps_restore.errors import ConfigError, NonFiniteStateError, ShapeMismatchError
from dpps_restore.fields import SignalField, check_shape, is_finite, squared_norm
from dpps_restore.metrics import psnr
from dpps_restore.operators import LinearOperator
from dpps_restore.priors import ZERO_RESIDUAL_THRESHOLD, PriorModel, guidance_gradient
from dpps_restore.schedule import MIN_CANDIDATES, NoiseSchedule, adaptive_candidate_count, ddim_coefficients

logger = logging.getLogger(__name__)

_INIT_STREAM = 0
_CANDIDATE_STREAM = 1
_MAX_SEED = 2**64
# 256x256 RGB: PIXEL_NORMALIZED keeps the per-pixel kick a NORMALIZED step has at this size
REFERENCE_PIXELS = 3 * 256 * 256


class SamplerVariant(str, Enum):
    DPS_RANDOM = "dps_random"
    DPS_DDIM = "dps_ddim"
    DPPS_FIXED_N = "dpps_fixed_n"
    DPPS_ADAPTIVE = "dpps_adaptive"
    MC_AVERAGE = "mc_average"


class StepScaleMode(str, Enum):
    CONSTANT = "constant"
    NORMALIZED = "normalized"
    PIXEL_NORMALIZED = "pixel_normalized"


class GuidanceNorm(str, Enum):
    L2 = "l2"
    SQUARED_L2 = "squared_l2"


@dataclass(frozen=True)
class SamplerConfig:
    """
    Sampler settings. `step_scale` is the guidance step size; NORMALIZED mode applies
    step_scale * grad ||r||^2 / ||r||, PIXEL_NORMALIZED rescales that kick by
    sqrt(size(x) / REFERENCE_PIXELS), CONSTANT mode applies step_scale * grad of the norm
    chosen by `guidance_norm`. `sigma_y_assumed` is the noise level the oracle posterior assumes.
    """

    variant: SamplerVariant = SamplerVariant.DPPS_ADAPTIVE
    step_scale: float = 1.0
    step_scale_mode: StepScaleMode = StepScaleMode.NORMALIZED
    guidance_norm: GuidanceNorm = GuidanceNorm.L2
    n_candidates: int = 20
    n_max: int = 50
    aligned_init: bool = True
    sigma_y_assumed: float = 0.01
    seed: int = 0

    def validate(self, prefix: str = "sampler") -> "SamplerConfig":
        try:
            variant = SamplerVariant(self.variant)
            step_scale_mode = StepScaleMode(self.step_scale_mode)
            guidance_norm = GuidanceNorm(self.guidance_norm)
        except ValueError as exc:
            raise ConfigError(prefix, str(exc)) from exc
        if isinstance(self.step_scale, bool) or not float(self.step_scale) > 0.0:
            raise ConfigError(f"{prefix}.step_scale", f"deve ser > 0 (recebido {self.step_scale}).")
        if isinstance(self.n_candidates, bool) or int(self.n_candidates) != self.n_candidates or self.n_candidates < 1:
            raise ConfigError(f"{prefix}.n_candidates", f"deve ser inteiro >= 1 (recebido {self.n_candidates}).")
        if isinstance(self.n_max, bool) or int(self.n_max) != self.n_max or self.n_max < MIN_CANDIDATES:
            raise ConfigError(f"{prefix}.n_max", f"deve ser inteiro >= {MIN_CANDIDATES} (recebido {self.n_max}).")
        if float(self.sigma_y_assumed) < 0.0:
            raise ConfigError(f"{prefix}.sigma_y_assumed", f"deve ser >= 0 (recebido {self.sigma_y_assumed}).")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or not 0 <= self.seed < _MAX_SEED:
            raise ConfigError(f"{prefix}.seed", f"deve ser inteiro de 64 bits sem sinal (recebido {self.seed}).")
        if variant is SamplerVariant.DPPS_FIXED_N and self.n_candidates == 1:
            logger.warning("dpps_fixed_n com n_candidates=1 equivale a dps_random.")
        return replace(
            self,
            variant=variant,
            step_scale_mode=step_scale_mode,
            guidance_norm=guidance_norm,
            step_scale=float(self.step_scale),
            sigma_y_assumed=float(self.sigma_y_assumed),
            n_candidates=int(self.n_candidates),
            n_max=int(self.n_max),
            seed=int(self.seed),
        )

    def candidate_count(self, s: NoiseSchedule, t: int) -> int:
        if self.variant in (SamplerVariant.DPS_RANDOM, SamplerVariant.DPS_DDIM):
            return 1
        if self.variant is SamplerVariant.DPPS_ADAPTIVE:
            return adaptive_candidate_count(s, t, self.n_max)
        return self.n_candidates


@dataclass(frozen=True, eq=False)
class StepRecord:
    t: int
    residual: float
    n_candidates: int
    candidate_distances: np.ndarray
    selected_index: int
    mu_error_ref: float | None = None
    oracle_mse: float | None = None
    reference_psnr: float | None = None
    estimate: SignalField | None = None

    @property
    def min_distance(self) -> float:
        return float(np.min(self.candidate_distances))

    @property
    def mean_distance(self) -> float:
        return float(np.mean(self.candidate_distances))


@dataclass(eq=False)
class RunTrace:
    per_step: list[StepRecord] = field(default_factory=list)
    final_estimate: SignalField | None = None

    @property
    def timesteps(self) -> list[int]:
        return [record.t for record in self.per_step]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(record, name) for record in self.per_step], dtype=np.float64)


def init_stream(seed: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 0, _INIT_STREAM])


def candidate_stream(seed: int, t: int) -> np.random.Generator:
    """Per-step substream keyed by (seed, t): changing n leaves every other step untouched."""
    return np.random.default_rng([int(seed), int(t), _CANDIDATE_STREAM])


def aligned_init(
    A: LinearOperator,
    y: SignalField,
    s: NoiseSchedule,
    rng: np.random.Generator,
    aligned: bool = True,
    noise: SignalField | None = None,
) -> SignalField:
    """x_T = sqrt(abar_T) A^T y + sqrt(1 - abar_T) eps, or plain eps when not aligned."""
    back_projected = A.apply_transpose(y)
    epsilon = rng.standard_normal(A.input_shape) if noise is None else np.asarray(noise, dtype=np.float64)
    check_shape(epsilon, A.input_shape, "noise")
    if not aligned:
        return epsilon
    alpha_bar_T = s.alpha_bar(s.T)  # pylint: disable=invalid-name
    return np.sqrt(alpha_bar_T) * back_projected + np.sqrt(1.0 - alpha_bar_T) * epsilon


def _guided_terms(
    p: PriorModel,
    x_t: SignalField,
    t: int,
    s: NoiseSchedule,
    y: SignalField,
    A: LinearOperator,
    step_scale: float,
    mode: StepScaleMode,
    norm: GuidanceNorm,
) -> tuple[SignalField, SignalField, float]:
    """Returns (mu, x0_hat, ||y - A x0_hat||^2)."""
    alpha_bar_t = s.alpha_bar(t)
    beta_t = s.beta(t)
    epsilon = p.predict_epsilon(x_t, t, s)
    unconditional_mean = (x_t - beta_t / np.sqrt(1.0 - alpha_bar_t) * epsilon) / np.sqrt(s.alpha(t))
    estimate = (x_t - np.sqrt(1.0 - alpha_bar_t) * epsilon) / np.sqrt(alpha_bar_t)
    residual = A.apply(estimate) - y
    residual_sq = squared_norm(residual)
    if step_scale == 0.0:
        return unconditional_mean, estimate, residual_sq

    if mode is not StepScaleMode.CONSTANT:
        residual_norm = np.sqrt(residual_sq)
        if residual_norm < ZERO_RESIDUAL_THRESHOLD:
            return unconditional_mean, estimate, residual_sq
        gradient = guidance_gradient(p, x_t, t, s, y, A, squared=True, residual=residual) / residual_norm
        if mode is StepScaleMode.PIXEL_NORMALIZED:
            gradient = gradient * np.sqrt(np.size(x_t) / REFERENCE_PIXELS)
    else:
        gradient = guidance_gradient(p, x_t, t, s, y, A, squared=norm is GuidanceNorm.SQUARED_L2, residual=residual)
    return unconditional_mean - step_scale * gradient, estimate, residual_sq


def guided_mean(
    p: PriorModel,
    x_t: SignalField,
    t: int,
    s: NoiseSchedule,
    y: SignalField,
    A: LinearOperator,
    step_scale: float,
    mode: StepScaleMode = StepScaleMode.NORMALIZED,
    norm: GuidanceNorm = GuidanceNorm.L2,
) -> SignalField:
    """mu = (x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) - step_scale * guidance."""
    mean, _, _ = _guided_terms(p, x_t, t, s, y, A, step_scale, StepScaleMode(mode), GuidanceNorm(norm))
    return mean


def candidate_distance(
    mu: SignalField,
    z: SignalField,
    sigma_t: float,
    x_t: SignalField,
    y: SignalField,
    A: LinearOperator,
    C1: float,  # pylint: disable=invalid-name
    C2: float,  # pylint: disable=invalid-name
) -> float:
    """D = ||A(mu + sigma_t z - C1 x_t) - C2 y||_2^2."""
    if not np.shape(mu) == np.shape(z) == np.shape(x_t):
        raise ShapeMismatchError(f"Shapes incompatíveis: mu={np.shape(mu)}, z={np.shape(z)}, x_t={np.shape(x_t)}.")
    return squared_norm(A.apply(mu + sigma_t * z - C1 * x_t) - C2 * y)


def select_candidate(distances: np.ndarray) -> int:
    """Index of the smallest distance; ties go to the lowest index."""
    return int(np.argmin(distances))


def dpps_step(
    p: PriorModel,
    x_t: SignalField,
    t: int,
    s: NoiseSchedule,
    y: SignalField,
    A: LinearOperator,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    x0_ref: SignalField | None = None,
    oracle_mean: SignalField | None = None,
) -> tuple[SignalField, StepRecord]:
    """One reverse step t -> t - 1 for the configured variant."""
    mu, estimate, residual_sq = _guided_terms(
        p, x_t, t, s, y, A, cfg.step_scale, cfg.step_scale_mode, cfg.guidance_norm
    )
    sigma_t = s.sigma(t)
    c1, c2 = ddim_coefficients(s, t)
    n_candidates = cfg.candidate_count(s, t)

    if cfg.variant is SamplerVariant.DPS_DDIM:
        candidates = [np.zeros_like(mu)]
    else:
        # materialized in index order before any evaluation
        candidates = [rng.standard_normal(mu.shape) for _ in range(n_candidates)]

    if sigma_t == 0.0:
        distances = np.full(len(candidates), candidate_distance(mu, candidates[0], sigma_t, x_t, y, A, c1, c2))
    else:
        distances = np.array([candidate_distance(mu, z, sigma_t, x_t, y, A, c1, c2) for z in candidates])
    selected_index = select_candidate(distances)

    if cfg.variant is SamplerVariant.DPS_DDIM:
        x_prev = mu
    elif cfg.variant is SamplerVariant.MC_AVERAGE:
        x_prev = mu + sigma_t * np.mean(candidates, axis=0)
    else:
        x_prev = mu + sigma_t * candidates[selected_index]

    if not (is_finite(x_prev) and is_finite(estimate)):
        raise NonFiniteStateError(
            t,
            {
                "variant": cfg.variant.value,
                "residual": residual_sq,
                "sigma_t": sigma_t,
                "step_scale": cfg.step_scale,
            },
        )

    record = StepRecord(
        t=t,
        residual=residual_sq,
        n_candidates=len(candidates),
        candidate_distances=distances,
        selected_index=selected_index,
        mu_error_ref=None if x0_ref is None else float(np.sqrt(squared_norm(np.sqrt(s.alpha_bar(t - 1)) * x0_ref - mu))),
        oracle_mse=None if oracle_mean is None else float(np.mean(np.square(estimate - oracle_mean))),
        reference_psnr=None if x0_ref is None else psnr(estimate, x0_ref),
        estimate=estimate,
    )
    return x_prev, record


def run(
    p: PriorModel,
    A: LinearOperator,
    y: SignalField,
    s: NoiseSchedule,
    cfg: SamplerConfig,
    x0_ref: SignalField | None = None,
    oracle_mean: SignalField | None = None,
    progress: bool = False,
    keep_estimates: bool = False,
) -> tuple[SignalField, RunTrace]:
    """
    Full reverse loop t = T..1 from aligned (or pure-noise) initialization. Returns the final
    Tweedie estimate x0_hat at t = 1 and the per-step trace.
    """
    if p.shape != A.input_shape:
        raise ShapeMismatchError(f"Prior com shape {p.shape} e operador com entrada {A.input_shape}.")
    check_shape(np.asarray(y), A.output_shape, "y")
    cfg = cfg.validate()

    x_t = aligned_init(A, y, s, init_stream(cfg.seed), aligned=cfg.aligned_init)
    trace = RunTrace()
    timesteps = tqdm(
        range(s.T, 0, -1), total=s.T, desc=cfg.variant.value, file=sys.stderr, disable=not progress, leave=False
    )
    for t in timesteps:
        x_t, record = dpps_step(p, x_t, t, s, y, A, cfg, candidate_stream(cfg.seed, t), x0_ref, oracle_mean)
        trace.final_estimate = record.estimate
        trace.per_step.append(record if keep_estimates else replace(record, estimate=None))

    logger.debug(
        "Run concluído: variant=%s seed=%s residual_final=%.6g", cfg.variant.value, cfg.seed, trace.per_step[-1].residual
    )
    return trace.final_estimate, trace
