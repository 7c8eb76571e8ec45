"""
Desk-scale restoration problems: a prior with known closed-form posterior, a degradation
operator, a ground-truth signal drawn from the prior, and its noisy measurement.

Every preset draws its randomness from substreams of the problem seed, so the same seed gives
the same x0, mask and measurement noise regardless of the sampler settings.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.spatial.distance import cdist

from dpps_restore.errors import InvalidRangeError, ShapeMismatchError
from dpps_restore.fields import SignalField, as_signal_field, check_shape
from dpps_restore.operators import (
    ConvolutionOperator,
    DownsampleOperator,
    IdentityOperator,
    LinearOperator,
    MaskOperator,
    box_kernel,
    gaussian_kernel,
    measure,
    motion_kernel,
    random_mask,
)
from dpps_restore.priors import GaussianPrior, GmmPrior, PriorModel

OPERATOR_KINDS = ("identity", "mask", "blur", "box", "motion", "downsample")

_X0_STREAM = 1
_MASK_STREAM = 2
_NOISE_STREAM = 3

GMM_WEIGHTS = (0.5, 0.3, 0.2)


@dataclass(frozen=True)
class PresetSpec:
    name: str
    ndim: int
    size: int
    prior_kind: str
    prior_params: dict[str, float]
    operator_kind: str
    operator_params: dict[str, Any]
    sigma_y: float = 0.01
    description: str = ""


PRESETS: dict[str, PresetSpec] = {
    spec.name: spec
    for spec in (
        PresetSpec(
            "gaussian-1d-mask",
            ndim=1,
            size=8,
            prior_kind="gaussian",
            prior_params={"mean": 0.5, "amplitude": 0.2, "length_scale": 2.0, "jitter": 1e-4},
            operator_kind="mask",
            operator_params={"alternating": True},
            description="Sinal 1D (d=8), prior gaussiano, máscara alternada de 50%.",
        ),
        PresetSpec(
            "gaussian-inpaint-16",
            ndim=2,
            size=16,
            prior_kind="gaussian",
            prior_params={"mean": 0.5, "amplitude": 0.2, "length_scale": 3.0, "jitter": 1e-4},
            operator_kind="mask",
            operator_params={"drop_fraction": 0.8},
            description="Imagem 16x16, prior gaussiano, inpainting com 80% dos pixels removidos.",
        ),
        PresetSpec(
            "gmm-inpaint-16",
            ndim=2,
            size=16,
            prior_kind="gmm",
            prior_params={"amplitude": 0.1, "length_scale": 2.5, "jitter": 1e-4},
            operator_kind="mask",
            operator_params={"drop_fraction": 0.8},
            description="Imagem 16x16, mistura de 3 gaussianas, inpainting com 80% dos pixels removidos.",
        ),
        PresetSpec(
            "gaussian-blur-16",
            ndim=2,
            size=16,
            prior_kind="gaussian",
            prior_params={"mean": 0.5, "amplitude": 0.2, "length_scale": 3.0, "jitter": 1e-4},
            operator_kind="blur",
            operator_params={"kernel_size": 5, "kernel_std": 1.0, "boundary": "reflect"},
            description="Imagem 16x16, prior gaussiano, blur gaussiano 5x5.",
        ),
        PresetSpec(
            "gaussian-sr4-16",
            ndim=2,
            size=16,
            prior_kind="gaussian",
            prior_params={"mean": 0.5, "amplitude": 0.2, "length_scale": 3.0, "jitter": 1e-4},
            operator_kind="downsample",
            operator_params={"factor": 4},
            description="Imagem 16x16, prior gaussiano, super-resolução 4x por média em blocos.",
        ),
        PresetSpec(
            "gaussian-motion-16",
            ndim=2,
            size=16,
            prior_kind="gaussian",
            prior_params={"mean": 0.5, "amplitude": 0.2, "length_scale": 3.0, "jitter": 1e-4},
            operator_kind="motion",
            operator_params={"length": 5, "boundary": "reflect"},
            description="Imagem 16x16, prior gaussiano, blur de movimento horizontal (comprimento 5).",
        ),
    )
}

PRESET_NAMES = tuple(PRESETS)


@dataclass(frozen=True, eq=False)
class Problem:
    name: str
    prior: PriorModel
    operator: LinearOperator
    x0: SignalField
    y: SignalField
    sigma_y: float
    seed: int
    mask: np.ndarray | None = None
    settings: dict[str, Any] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.prior.shape


def problem_stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def squared_exponential_covariance(
    shape: tuple[int, ...], amplitude: float, length_scale: float, jitter: float
) -> np.ndarray:
    """amplitude^2 exp(-|p_i - p_j|^2 / (2 l^2)) + jitter I over the pixel grid."""
    positions = np.indices(shape).reshape(len(shape), -1).T.astype(np.float64)
    covariance = amplitude**2 * np.exp(-cdist(positions, positions, "sqeuclidean") / (2.0 * length_scale**2))
    covariance[np.diag_indices_from(covariance)] += jitter
    return covariance


def gaussian_field_prior(
    shape: tuple[int, ...], mean: float, amplitude: float, length_scale: float, jitter: float
) -> GaussianPrior:
    return GaussianPrior(np.full(shape, float(mean)), squared_exponential_covariance(shape, amplitude, length_scale, jitter))


def gmm_component_means(size: int) -> list[np.ndarray]:
    """Horizontal gradient, vertical gradient and a centered disk, all within [0.2, 0.8]."""
    rows, cols = np.indices((size, size), dtype=np.float64)
    ramp = 1.0 / max(size - 1, 1)
    center = (size - 1) / 2.0
    disk = (rows - center) ** 2 + (cols - center) ** 2 <= (size / 3.0) ** 2
    return [
        0.2 + 0.6 * cols * ramp,
        0.8 - 0.6 * rows * ramp,
        np.where(disk, 0.8, 0.2),
    ]


def gmm_image_prior(size: int, amplitude: float, length_scale: float, jitter: float) -> GmmPrior:
    covariance = squared_exponential_covariance((size, size), amplitude, length_scale, jitter)
    return GmmPrior(
        [(weight, mean, covariance) for weight, mean in zip(GMM_WEIGHTS, gmm_component_means(size))]
    )


def alternating_mask(shape: tuple[int, ...]) -> np.ndarray:
    mask = np.zeros(int(np.prod(shape)), dtype=bool)
    mask[::2] = True
    return mask.reshape(shape)


def build_operator(
    kind: str,
    shape: tuple[int, ...],
    rng: np.random.Generator,
    params: Mapping[str, Any],
    mask: np.ndarray | None = None,
) -> tuple[LinearOperator, np.ndarray | None]:
    """Returns the operator and, for inpainting, the boolean mask it keeps."""
    boundary = params.get("boundary", "reflect")
    if kind == "identity":
        return IdentityOperator(shape), None
    if kind == "mask":
        if mask is None:
            if params.get("alternating"):
                mask = alternating_mask(shape)
            else:
                mask = random_mask(shape, float(params.get("drop_fraction", 0.8)), rng)
        return MaskOperator(mask, shape), np.asarray(mask, dtype=bool)
    if kind == "downsample":
        return DownsampleOperator(int(params.get("factor", 4)), shape), None
    if len(shape) < 2:
        raise ShapeMismatchError(f"Operador '{kind}' requer sinal 2D (recebido shape {shape}).")
    if kind == "blur":
        kernel = gaussian_kernel(int(params.get("kernel_size", 5)), float(params.get("kernel_std", 1.0)))
    elif kind == "box":
        kernel = box_kernel(int(params.get("kernel_size", 3)))
    elif kind == "motion":
        kernel = motion_kernel(int(params.get("length", 5)))
    else:
        raise InvalidRangeError(f"Operador '{kind}' desconhecido. Opções: {list(OPERATOR_KINDS)}.")
    return ConvolutionOperator(kernel, shape, boundary=boundary), None


def _defined(overrides: Mapping[str, Any] | None) -> dict[str, Any]:
    return {key: value for key, value in (overrides or {}).items() if value is not None}


def build_problem(
    name: str,
    sigma_y: float | None = None,
    seed: int = 0,
    size: int | None = None,
    prior_overrides: Mapping[str, Any] | None = None,
    operator_overrides: Mapping[str, Any] | None = None,
    x0: SignalField | None = None,
    mask: np.ndarray | None = None,
) -> Problem:
    """
    Instantiates a preset. Overrides replace individual prior/operator parameters; an operator
    override with `kind` swaps the degradation while keeping the prior. A supplied `x0` replaces
    the prior draw and fixes the signal size.
    """
    if name not in PRESETS:
        raise InvalidRangeError(f"Preset '{name}' desconhecido. Opções: {list(PRESET_NAMES)}.")
    spec = PRESETS[name]
    if x0 is not None:
        x0 = as_signal_field(x0)
        if x0.ndim != spec.ndim:
            raise ShapeMismatchError(f"Referência com {x0.ndim} dimensões; preset '{name}' espera {spec.ndim}.")
        if spec.ndim == 2 and x0.shape[0] != x0.shape[1]:
            raise ShapeMismatchError(f"Referência deve ser quadrada (recebido {x0.shape}).")
        size = x0.shape[0]
    size = spec.size if size is None else int(size)
    shape = (size,) * spec.ndim

    prior_params = {**spec.prior_params, **_defined(prior_overrides)}
    if spec.prior_kind == "gmm":
        prior_params.pop("mean", None)
        prior: PriorModel = gmm_image_prior(size, **prior_params)
    else:
        prior = gaussian_field_prior(shape, **prior_params)

    operator_settings = _defined(operator_overrides)
    operator_settings.pop("mask_path", None)
    kind = operator_settings.pop("kind", spec.operator_kind)
    operator_params = {**(spec.operator_params if kind == spec.operator_kind else {}), **operator_settings}
    if "drop_fraction" in operator_settings:
        operator_params.pop("alternating", None)
    operator, kept = build_operator(kind, shape, problem_stream(seed, _MASK_STREAM), operator_params, mask)

    if x0 is None:
        x0 = prior.sample(problem_stream(seed, _X0_STREAM))
    check_shape(x0, shape, "x0")
    noise_level = spec.sigma_y if sigma_y is None else float(sigma_y)
    y = measure(operator, x0, noise_level, problem_stream(seed, _NOISE_STREAM))
    return Problem(
        name=name,
        prior=prior,
        operator=operator,
        x0=x0,
        y=y,
        sigma_y=noise_level,
        seed=int(seed),
        mask=kept,
        settings={"size": size, "operator": kind, "operator_params": operator_params, "prior_params": prior_params},
    )


@dataclass(frozen=True, eq=False)
class ProblemSource:
    """Preset plus overrides; `build(seed)` instantiates one paired problem per seed."""

    preset: str
    sigma_y: float | None = None
    size: int | None = None
    prior_overrides: Mapping[str, Any] | None = None
    operator_overrides: Mapping[str, Any] | None = None
    x0: SignalField | None = None
    mask: np.ndarray | None = None

    def build(self, seed: int, sigma_y: float | None = None) -> Problem:
        return build_problem(
            self.preset,
            sigma_y=self.sigma_y if sigma_y is None else sigma_y,
            seed=seed,
            size=self.size,
            prior_overrides=self.prior_overrides,
            operator_overrides=self.operator_overrides,
            x0=self.x0,
            mask=self.mask,
        )
