"""
Run configuration: package logger, defaults and the YAML-backed RunConfig tree.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from dpps_restore.catalog.presets import OPERATOR_KINDS, PRESET_NAMES, PRESETS
from dpps_restore.errors import ConfigError
from dpps_restore.sampler import SamplerConfig, SamplerVariant
from dpps_restore.schedule import VarianceConvention

logger = logging.getLogger("DppsRestore")
logger.setLevel(logging.INFO)

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_N_MAX = 50
DEFAULT_SIGMA_Y = 0.01
DEFAULT_DENSE_CAP = 10**6
DEFAULT_PRESET = "gmm-inpaint-16"
DEFAULT_OUTPUT_DIR = "outputs"

EXPERIMENT_NAMES = (
    "variance",
    "convergence",
    "lambda-sweep",
    "error-accum",
    "candidate-sweep",
    "noise-sweep",
    "overhead",
)

_MAX_SEED = 2**64


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    variance: VarianceConvention = VarianceConvention.POSTERIOR


@dataclass(frozen=True)
class ProblemConfig:
    """`sigma_y` and `size` left as None fall back to the preset's own values."""

    preset: str = DEFAULT_PRESET
    sigma_y: float | None = DEFAULT_SIGMA_Y
    seed: int = 0
    reference: str | None = None
    size: int | None = None


@dataclass(frozen=True)
class PriorOverrides:
    amplitude: float | None = None
    length_scale: float | None = None
    jitter: float | None = None
    mean: float | None = None


@dataclass(frozen=True)
class OperatorOverrides:
    kind: str | None = None
    drop_fraction: float | None = None
    kernel_size: int | None = None
    kernel_std: float | None = None
    factor: int | None = None
    length: int | None = None
    boundary: str | None = None
    mask_path: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    variants: tuple[str, ...] = ("dpps_fixed_n", "dps_random", "dps_ddim")
    step_scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    n_values: tuple[int, ...] = (1, 2, 10, 20)
    sigma_levels: tuple[float, ...] = (0.0, 0.01, 0.05)
    N: int = 10
    M: int = 1000
    master_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    t_fraction: float = 0.5
    fixture_preset: str = "gaussian-1d-mask"


@dataclass(frozen=True)
class RunConfig:
    """
    Whole run. The top-level `seed` drives the sampler streams; `--seed` on the CLI replaces it.
    """

    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    prior: PriorOverrides | None = None
    operator: OperatorOverrides | None = None
    output_dir: str = DEFAULT_OUTPUT_DIR
    seed: int = 0
    progress: bool = True

    def sampler_config(self) -> SamplerConfig:
        return replace(self.sampler, seed=self.seed)

    def with_seed(self, seed: int) -> "RunConfig":
        return validate_config(replace(self, seed=seed))


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(path, message)


def _check_seed(value: Any, path: str) -> int:
    _require(_is_int(value) and 0 <= value < _MAX_SEED, path, f"deve ser inteiro de 64 bits sem sinal (recebido {value!r}).")
    return int(value)


def _float_like(value: Any) -> Any:
    """YAML 1.1 loads `1e-4` (no dot) as a string; strings float() accepts become floats."""
    if not isinstance(value, str):
        return value
    try:
        return float(value)
    except ValueError:
        return value


def _section(cls: type, raw: Any, path: str, exclude: frozenset[str] = frozenset()) -> Any:
    if raw is None:
        return cls()
    _require(isinstance(raw, dict), path, "deve ser um mapeamento.")
    known = {item.name for item in fields(cls)} - exclude
    unknown = sorted(str(key) for key in raw if key not in known)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", f"chave desconhecida. Chaves válidas: {sorted(known)}.")
    float_fields = {item.name for item in fields(cls) if "float" in str(item.type)}
    values = {key: tuple(value) if isinstance(value, list) else value for key, value in raw.items()}
    for key in float_fields & values.keys():
        value = values[key]
        values[key] = tuple(_float_like(item) for item in value) if isinstance(value, tuple) else _float_like(value)
    return cls(**values)


def _validate_schedule(section: ScheduleConfig) -> ScheduleConfig:
    _require(_is_int(section.T) and section.T >= 2, "schedule.T", f"deve ser inteiro >= 2 (recebido {section.T!r}).")
    _require(_is_number(section.beta_start), "schedule.beta_start", "deve ser numérico.")
    _require(_is_number(section.beta_end), "schedule.beta_end", "deve ser numérico.")
    _require(
        0.0 < section.beta_start < section.beta_end < 1.0,
        "schedule.beta_start",
        f"esperado 0 < beta_start < beta_end < 1 (recebido {section.beta_start}, {section.beta_end}).",
    )
    try:
        variance = VarianceConvention(section.variance)
    except ValueError as exc:
        raise ConfigError("schedule.variance", f"opções: {[item.value for item in VarianceConvention]}.") from exc
    return replace(section, beta_start=float(section.beta_start), beta_end=float(section.beta_end), variance=variance)


def _validate_problem(section: ProblemConfig) -> ProblemConfig:
    _require(section.preset in PRESET_NAMES, "problem.preset", f"preset desconhecido. Opções: {list(PRESET_NAMES)}.")
    if section.sigma_y is not None:
        _require(_is_number(section.sigma_y) and section.sigma_y >= 0.0, "problem.sigma_y", "deve ser >= 0.")
    if section.size is not None:
        _require(_is_int(section.size) and section.size >= 2, "problem.size", "deve ser inteiro >= 2.")
    if section.reference is not None:
        _require(isinstance(section.reference, str), "problem.reference", "deve ser um caminho.")
    return replace(
        section,
        seed=_check_seed(section.seed, "problem.seed"),
        sigma_y=None if section.sigma_y is None else float(section.sigma_y),
    )


def _validate_prior(section: PriorOverrides | None) -> PriorOverrides | None:
    if section is None:
        return None
    for name in ("amplitude", "length_scale", "jitter"):
        value = getattr(section, name)
        if value is not None:
            _require(_is_number(value) and value > 0.0, f"prior.{name}", "deve ser > 0.")
    if section.mean is not None:
        _require(_is_number(section.mean), "prior.mean", "deve ser numérico.")
    return section


def _validate_operator(section: OperatorOverrides | None) -> OperatorOverrides | None:
    if section is None:
        return None
    if section.kind is not None:
        _require(section.kind in OPERATOR_KINDS, "operator.kind", f"opções: {list(OPERATOR_KINDS)}.")
    if section.drop_fraction is not None:
        _require(
            _is_number(section.drop_fraction) and 0.0 <= section.drop_fraction < 1.0,
            "operator.drop_fraction",
            "deve estar em [0, 1).",
        )
    for name in ("kernel_size", "length"):
        value = getattr(section, name)
        if value is not None:
            _require(_is_int(value) and value >= 1 and value % 2 == 1, f"operator.{name}", "deve ser inteiro ímpar >= 1.")
    if section.factor is not None:
        _require(_is_int(section.factor) and section.factor >= 1, "operator.factor", "deve ser inteiro >= 1.")
    if section.kernel_std is not None:
        _require(_is_number(section.kernel_std) and section.kernel_std > 0.0, "operator.kernel_std", "deve ser > 0.")
    if section.boundary is not None:
        _require(section.boundary in ("reflect", "zero", "wrap"), "operator.boundary", "opções: reflect, zero, wrap.")
    return section


def _validate_sampler(section: SamplerConfig) -> SamplerConfig:
    _require(isinstance(section.aligned_init, bool), "sampler.aligned_init", "deve ser booleano.")
    for name in ("step_scale", "sigma_y_assumed"):
        _require(_is_number(getattr(section, name)), f"sampler.{name}", "deve ser numérico.")
    return section.validate("sampler")


def _validate_experiment(section: ExperimentConfig) -> ExperimentConfig:
    path = "experiment"
    for name in ("seeds", "variants", "step_scales", "n_values", "sigma_levels", "master_seeds"):
        _require(isinstance(getattr(section, name), tuple), f"{path}.{name}", "deve ser uma lista.")
    _require(len(section.seeds) >= 1, f"{path}.seeds", "deve ter pelo menos uma seed.")
    seeds = tuple(_check_seed(seed, f"{path}.seeds") for seed in section.seeds)
    master_seeds = tuple(_check_seed(seed, f"{path}.master_seeds") for seed in section.master_seeds)
    _require(len(master_seeds) >= 1, f"{path}.master_seeds", "deve ter pelo menos uma seed.")
    valid_variants = [item.value for item in SamplerVariant]
    for variant in section.variants:
        _require(variant in valid_variants, f"{path}.variants", f"variante '{variant}' inválida. Opções: {valid_variants}.")
    _require(len(section.variants) >= 1, f"{path}.variants", "deve ter pelo menos uma variante.")
    for scale in section.step_scales:
        _require(_is_number(scale) and scale > 0.0, f"{path}.step_scales", "valores devem ser > 0.")
    for count in section.n_values:
        _require(_is_int(count) and count >= 1, f"{path}.n_values", "valores devem ser inteiros >= 1.")
    for level in section.sigma_levels:
        _require(_is_number(level) and level >= 0.0, f"{path}.sigma_levels", "valores devem ser >= 0.")
    _require(_is_int(section.N) and section.N >= 1, f"{path}.N", "deve ser inteiro >= 1.")
    _require(_is_int(section.M) and section.M >= 100, f"{path}.M", "deve ser inteiro >= 100.")
    _require(
        section.fixture_preset in PRESET_NAMES,
        f"{path}.fixture_preset",
        f"preset desconhecido. Opções: {list(PRESET_NAMES)}.",
    )
    _require(
        _is_number(section.t_fraction) and 0.0 < section.t_fraction <= 1.0, f"{path}.t_fraction", "deve estar em (0, 1]."
    )
    return replace(
        section,
        seeds=seeds,
        master_seeds=master_seeds,
        step_scales=tuple(float(scale) for scale in section.step_scales),
        sigma_levels=tuple(float(level) for level in section.sigma_levels),
        t_fraction=float(section.t_fraction),
    )


def _check_mask_path(problem: ProblemConfig, operator: OperatorOverrides | None) -> None:
    if operator is None or operator.mask_path is None:
        return
    _require(isinstance(operator.mask_path, str), "operator.mask_path", "deve ser um caminho.")
    kind = operator.kind or PRESETS[problem.preset].operator_kind
    _require(kind == "mask", "operator.mask_path", f"só vale para operator.kind = mask (operador efetivo: {kind}).")


def validate_config(cfg: RunConfig) -> RunConfig:
    _require(isinstance(cfg.output_dir, str) and cfg.output_dir != "", "output_dir", "deve ser um caminho.")
    _require(isinstance(cfg.progress, bool), "progress", "deve ser booleano.")
    seed = _check_seed(cfg.seed, "seed")
    problem = _validate_problem(cfg.problem)
    operator = _validate_operator(cfg.operator)
    _check_mask_path(problem, operator)
    return replace(
        cfg,
        schedule=_validate_schedule(cfg.schedule),
        problem=problem,
        sampler=replace(_validate_sampler(cfg.sampler), seed=seed),
        experiment=_validate_experiment(cfg.experiment),
        prior=_validate_prior(cfg.prior),
        operator=operator,
        seed=seed,
    )


def parse_config(raw: Any) -> RunConfig:
    """Builds a validated RunConfig from a parsed YAML mapping; unknown keys are rejected."""
    if raw is None:
        raw = {}
    _require(isinstance(raw, dict), "config", "o arquivo deve conter um mapeamento no nível raiz.")
    top_level = {item.name for item in fields(RunConfig)}
    unknown = sorted(str(key) for key in raw if key not in top_level)
    if unknown:
        raise ConfigError(unknown[0], f"chave desconhecida. Chaves válidas: {sorted(top_level)}.")

    try:
        cfg = RunConfig(
            schedule=_section(ScheduleConfig, raw.get("schedule"), "schedule"),
            problem=_section(ProblemConfig, raw.get("problem"), "problem"),
            sampler=_section(SamplerConfig, raw.get("sampler"), "sampler", exclude=frozenset({"seed"})),
            experiment=_section(ExperimentConfig, raw.get("experiment"), "experiment"),
            prior=None if raw.get("prior") is None else _section(PriorOverrides, raw["prior"], "prior"),
            operator=None if raw.get("operator") is None else _section(OperatorOverrides, raw["operator"], "operator"),
            output_dir=raw.get("output_dir", DEFAULT_OUTPUT_DIR),
            seed=raw.get("seed", 0),
            progress=raw.get("progress", True),
        )
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc
    return validate_config(cfg)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"Falha ao ler '{path}'. Erro: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"YAML inválido em '{path}'. Erro: {exc}") from exc
    cfg = parse_config(raw)
    logger.info("Configuração carregada de %s (preset=%s, variant=%s).", path, cfg.problem.preset, cfg.sampler.variant.value)
    return cfg


def _plain(value: Any) -> Any:
    if is_dataclass(value):
        return {item.name: _plain(getattr(value, item.name)) for item in fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (tuple, list)):
        return [_plain(item) for item in value]
    return value


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    plain = _plain(cfg)
    plain["sampler"].pop("seed")
    return plain


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
