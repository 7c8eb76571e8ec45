"""
Diffusion noise schedule and the timestep-indexed coefficients used by forward sampling,
ancestral reverse sampling and the DDIM deterministic target.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from dpps_restore.errors import InvalidRangeError
from dpps_restore.fields import SignalField, check_same_shape

logger = logging.getLogger(__name__)

# floor() guard so that values such as 50 * 0.5 are not lost to one ulp of round-off
_COUNT_ROUNDING_GUARD = 1e-9
MIN_CANDIDATES = 2


class VarianceConvention(str, Enum):
    POSTERIOR = "posterior"
    BETA = "beta"


def _readonly(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """
    Precomputed schedule. Timesteps are t = 1..T; arrays of length T are indexed by t - 1,
    `alpha_bars` has length T + 1 with alpha_bars[0] = 1 so that t = 1 needs no branch.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray
    snrs: np.ndarray
    variance: VarianceConvention = VarianceConvention.POSTERIOR

    @classmethod
    def from_betas(
        cls, betas: np.ndarray, variance: VarianceConvention = VarianceConvention.POSTERIOR
    ) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64).copy()
        if betas.ndim != 1 or betas.size < 2:
            raise InvalidRangeError("betas deve ser um vetor com pelo menos 2 elementos.")
        if not (np.all(betas > 0.0) and np.all(betas < 1.0)):
            raise InvalidRangeError("Todos os betas devem estar em (0, 1).")
        if not np.all(np.diff(betas) > 0.0):
            raise InvalidRangeError("betas deve ser estritamente crescente.")

        alphas = 1.0 - betas
        alpha_bars = np.concatenate(([1.0], np.cumprod(alphas)))
        one_minus_prev = 1.0 - alpha_bars[:-1]
        one_minus_cur = 1.0 - alpha_bars[1:]
        if VarianceConvention(variance) is VarianceConvention.POSTERIOR:
            sigma_squares = one_minus_prev / one_minus_cur * betas
        else:
            sigma_squares = betas.copy()
        snrs = alpha_bars[1:] / one_minus_cur

        return cls(
            T=int(betas.size),
            betas=_readonly(betas),
            alphas=_readonly(alphas),
            alpha_bars=_readonly(alpha_bars),
            sigmas=_readonly(np.sqrt(sigma_squares)),
            snrs=_readonly(snrs),
            variance=VarianceConvention(variance),
        )

    def check_timestep(self, t: int, allow_zero: bool = False) -> int:
        lower_bound = 0 if allow_zero else 1
        if not lower_bound <= int(t) <= self.T:
            raise InvalidRangeError(f"timestep t={t} fora do intervalo [{lower_bound}, {self.T}].")
        return int(t)

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.check_timestep(t, allow_zero=True)])

    def beta(self, t: int) -> float:
        return float(self.betas[self.check_timestep(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self.check_timestep(t) - 1])

    def sigma(self, t: int) -> float:
        return float(self.sigmas[self.check_timestep(t) - 1])

    def snr(self, t: int) -> float:
        return float(self.snrs[self.check_timestep(t) - 1])


@lru_cache(maxsize=16)
def make_linear_schedule(
    T: int,
    beta_start: float,
    beta_end: float,
    variance: VarianceConvention = VarianceConvention.POSTERIOR,
) -> NoiseSchedule:
    """Standard DDPM linear schedule, betas spaced from beta_start to beta_end inclusive."""
    if int(T) != T or T < 2:
        raise InvalidRangeError(f"T deve ser inteiro >= 2 (recebido {T}).")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise InvalidRangeError(
            f"Esperado 0 < beta_start < beta_end < 1 (recebido beta_start={beta_start}, beta_end={beta_end})."
        )
    logger.debug("Construindo schedule linear T=%s beta=[%s, %s]", T, beta_start, beta_end)
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, int(T), dtype=np.float64), variance)


def ddim_coefficients_from_alpha_bars(alpha_bar_prev: float, alpha_bar_t: float) -> tuple[float, float]:
    if alpha_bar_t >= 1.0:
        # degenerate identity step (t = 0 boundary)
        return 1.0, 0.0
    c1 = np.sqrt(1.0 - alpha_bar_prev) / np.sqrt(1.0 - alpha_bar_t)
    c2 = np.sqrt(alpha_bar_prev) - np.sqrt(alpha_bar_t) * c1
    return float(c1), float(c2)


def ddim_coefficients(s: NoiseSchedule, t: int) -> tuple[float, float]:
    s.check_timestep(t)
    return ddim_coefficients_from_alpha_bars(float(s.alpha_bars[t - 1]), float(s.alpha_bars[t]))


def forward_sample(s: NoiseSchedule, x0: SignalField, t: int, rng: np.random.Generator) -> SignalField:
    """Draw x_t ~ q(x_t | x0) = N(sqrt(abar_t) x0, (1 - abar_t) I). t = 0 returns x0."""
    alpha_bar_t = s.alpha_bar(t)
    noise = rng.standard_normal(np.shape(x0))
    return np.sqrt(alpha_bar_t) * x0 + np.sqrt(1.0 - alpha_bar_t) * noise


def ddim_target(s: NoiseSchedule, x_t: SignalField, x0: SignalField, t: int) -> SignalField:
    check_same_shape(x_t, x0, ("x_t", "x0"))
    c1, c2 = ddim_coefficients(s, t)
    return c1 * x_t + c2 * x0


def candidate_count_from_snr(snr: float, n_max: int) -> int:
    if int(n_max) != n_max or n_max < MIN_CANDIDATES:
        raise InvalidRangeError(f"n_max deve ser inteiro >= {MIN_CANDIDATES} (recebido {n_max}).")
    fraction = -np.expm1(-snr)
    return max(int(np.floor(n_max * fraction + _COUNT_ROUNDING_GUARD)), MIN_CANDIDATES)


def adaptive_candidate_count(s: NoiseSchedule, t: int, n_max: int) -> int:
    """n = max(floor(n_max * (1 - exp(-snr_t))), 2)."""
    return candidate_count_from_snr(s.snr(t), n_max)
