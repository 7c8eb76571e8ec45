"""
Analytic priors standing in for a pretrained noise-prediction network: exact scores of the
diffused marginals, Tweedie denoising, exact denoiser Jacobians and the DPS guidance gradient.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, softmax

from dpps_restore.errors import CovarianceError, ShapeMismatchError, UnsupportedCapabilityError
from dpps_restore.fields import SignalField, as_signal_field, check_shape, squared_norm
from dpps_restore.schedule import NoiseSchedule

if TYPE_CHECKING:
    from dpps_restore.operators import LinearOperator

logger = logging.getLogger(__name__)

ZERO_RESIDUAL_THRESHOLD = 1e-12
FINITE_DIFFERENCE_STEP = 1e-5
WEIGHT_SUM_TOLERANCE = 1e-12


class Covariance:
    """
    Symmetric positive-definite covariance over the flattened signal (length d), stored in its
    eigenbasis: isotropic and diagonal forms keep the identity basis, full matrices keep Q.
    """

    def __init__(self, eigenvalues: np.ndarray, basis: np.ndarray | None, kind: str):
        self.eigenvalues = eigenvalues
        self.basis = basis
        self.kind = kind

    @classmethod
    def from_spec(cls, spec: float | Sequence[float] | np.ndarray, dim: int) -> "Covariance":
        values = np.asarray(spec, dtype=np.float64)
        if values.ndim == 0:
            return cls(cls._positive(np.full(dim, float(values))), None, "isotropic")
        if values.ndim == 1:
            if values.size != dim:
                raise ShapeMismatchError(f"Covariância diagonal com {values.size} entradas; esperado {dim}.")
            return cls(cls._positive(values.copy()), None, "diagonal")
        if values.shape != (dim, dim):
            raise ShapeMismatchError(f"Covariância cheia com shape {values.shape}; esperado {(dim, dim)}.")
        if not np.allclose(values, values.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(values).max()))):
            raise CovarianceError("Covariância cheia não é simétrica.")
        try:
            linalg.cholesky(values, lower=True)
        except linalg.LinAlgError as exc:
            raise CovarianceError("Covariância não é positiva definida (Cholesky falhou).") from exc
        eigenvalues, basis = linalg.eigh(values)
        return cls(cls._positive(eigenvalues), basis, "full")

    @staticmethod
    def _positive(eigenvalues: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(eigenvalues)) or np.any(eigenvalues <= 0.0):
            raise CovarianceError("Covariância deve ser positiva definida.")
        return eigenvalues

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    def to_eigenbasis(self, vector: np.ndarray) -> np.ndarray:
        return vector if self.basis is None else self.basis.T @ vector

    def from_eigenbasis(self, vector: np.ndarray) -> np.ndarray:
        return vector if self.basis is None else self.basis @ vector

    def apply_spectral(self, spectrum: np.ndarray, vector: np.ndarray) -> np.ndarray:
        """f(Sigma) v for a function given by its values on the eigenvalues."""
        return self.from_eigenbasis(spectrum * self.to_eigenbasis(vector))

    def marginal_eigenvalues(self, alpha_bar: float) -> np.ndarray:
        """Eigenvalues of abar * Sigma + (1 - abar) I."""
        return alpha_bar * self.eigenvalues + (1.0 - alpha_bar)

    def matrix(self) -> np.ndarray:
        if self.basis is None:
            return np.diag(self.eigenvalues)
        return (self.basis * self.eigenvalues) @ self.basis.T

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.from_eigenbasis(np.sqrt(self.eigenvalues) * rng.standard_normal(self.dim))


@dataclass(frozen=True)
class PriorCapabilities:
    has_exact_denoiser_jacobian: bool = False


class PriorModel(ABC):
    """Prior p(x0) with the diffused marginals p_t = N-convolution of p with q(x_t | x0)."""

    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(int(size) for size in shape)
        self.dim = int(np.prod(self.shape))

    @property
    def capabilities(self) -> PriorCapabilities:
        return PriorCapabilities()

    def _flat_input(self, x_t: SignalField) -> np.ndarray:
        check_shape(np.asarray(x_t), self.shape, "x_t")
        return np.asarray(x_t, dtype=np.float64).ravel()

    @abstractmethod
    def _score_flat(self, x_flat: np.ndarray, alpha_bar: float) -> np.ndarray:
        """grad log p_t at x (flattened)."""

    @abstractmethod
    def _log_density_flat(self, x_flat: np.ndarray, alpha_bar: float) -> float:
        """log p_t at x (flattened)."""

    def _denoiser_jacobian_vec_flat(self, x_flat: np.ndarray, alpha_bar: float, v_flat: np.ndarray) -> np.ndarray:
        raise UnsupportedCapabilityError(f"{type(self).__name__} não expõe jacobiano exato do denoiser.")

    def score(self, x_t: SignalField, t: int, s: NoiseSchedule) -> SignalField:
        x_flat = self._flat_input(x_t)
        return self._score_flat(x_flat, s.alpha_bar(t)).reshape(self.shape)

    def log_density(self, x_t: SignalField, t: int, s: NoiseSchedule) -> float:
        return self._log_density_flat(self._flat_input(x_t), s.alpha_bar(t))

    def predict_epsilon(self, x_t: SignalField, t: int, s: NoiseSchedule) -> SignalField:
        """eps = -sqrt(1 - abar_t) * grad log p_t(x_t)."""
        return -np.sqrt(1.0 - s.alpha_bar(t)) * self.score(x_t, t, s)

    def denoise(self, x_t: SignalField, t: int, s: NoiseSchedule) -> SignalField:
        """Tweedie estimate x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)."""
        alpha_bar_t = s.alpha_bar(t)
        epsilon = self.predict_epsilon(x_t, t, s)
        return (np.asarray(x_t, dtype=np.float64) - np.sqrt(1.0 - alpha_bar_t) * epsilon) / np.sqrt(alpha_bar_t)

    def denoiser_jacobian_vec(self, x_t: SignalField, t: int, s: NoiseSchedule, v: SignalField) -> SignalField:
        """(d x0_hat / d x_t)^T v."""
        if not self.capabilities.has_exact_denoiser_jacobian:
            raise UnsupportedCapabilityError(f"{type(self).__name__} não expõe jacobiano exato do denoiser.")
        check_shape(np.asarray(v), self.shape, "v")
        x_flat = self._flat_input(x_t)
        v_flat = np.asarray(v, dtype=np.float64).ravel()
        return self._denoiser_jacobian_vec_flat(x_flat, s.alpha_bar(t), v_flat).reshape(self.shape)

    def sample(self, rng: np.random.Generator) -> SignalField:
        raise UnsupportedCapabilityError(f"{type(self).__name__} não suporta amostragem direta.")


class GaussianPrior(PriorModel):
    """N(mean, covariance); p_t = N(sqrt(abar) mean, abar * Sigma + (1 - abar) I)."""

    def __init__(self, mean: SignalField, covariance: float | Sequence[float] | np.ndarray):
        mean_field = as_signal_field(mean)
        super().__init__(mean_field.shape)
        self.mean = mean_field
        self.covariance = covariance if isinstance(covariance, Covariance) else Covariance.from_spec(covariance, self.dim)
        if self.covariance.dim != self.dim:
            raise ShapeMismatchError(f"Covariância de dimensão {self.covariance.dim}; esperado {self.dim}.")

    @property
    def capabilities(self) -> PriorCapabilities:
        return PriorCapabilities(has_exact_denoiser_jacobian=True)

    def _centered(self, x_flat: np.ndarray, alpha_bar: float) -> np.ndarray:
        return x_flat - np.sqrt(alpha_bar) * self.mean.ravel()

    def _score_flat(self, x_flat: np.ndarray, alpha_bar: float) -> np.ndarray:
        marginal = self.covariance.marginal_eigenvalues(alpha_bar)
        return -self.covariance.apply_spectral(1.0 / marginal, self._centered(x_flat, alpha_bar))

    def _log_density_flat(self, x_flat: np.ndarray, alpha_bar: float) -> float:
        marginal = self.covariance.marginal_eigenvalues(alpha_bar)
        projected = self.covariance.to_eigenbasis(self._centered(x_flat, alpha_bar))
        return float(
            -0.5 * np.sum(projected**2 / marginal) - 0.5 * np.sum(np.log(marginal)) - 0.5 * self.dim * np.log(2.0 * np.pi)
        )

    def _denoiser_jacobian_vec_flat(self, x_flat: np.ndarray, alpha_bar: float, v_flat: np.ndarray) -> np.ndarray:
        # J = sqrt(abar) Sigma (abar Sigma + (1 - abar) I)^-1, symmetric and constant in x
        marginal = self.covariance.marginal_eigenvalues(alpha_bar)
        return self.covariance.apply_spectral(np.sqrt(alpha_bar) * self.covariance.eigenvalues / marginal, v_flat)

    def posterior_mean(self, x_t: SignalField, t: int, s: NoiseSchedule) -> SignalField:
        """Conjugate E[x0 | x_t] = mean + sqrt(abar) Sigma M^-1 (x_t - sqrt(abar) mean)."""
        alpha_bar_t = s.alpha_bar(t)
        x_flat = self._flat_input(x_t)
        marginal = self.covariance.marginal_eigenvalues(alpha_bar_t)
        correction = self.covariance.apply_spectral(
            np.sqrt(alpha_bar_t) * self.covariance.eigenvalues / marginal, self._centered(x_flat, alpha_bar_t)
        )
        return (self.mean.ravel() + correction).reshape(self.shape)

    def sample(self, rng: np.random.Generator) -> SignalField:
        return (self.mean.ravel() + self.covariance.sample(rng)).reshape(self.shape)


@dataclass(frozen=True)
class GmmComponent:
    weight: float
    prior: GaussianPrior


class GmmPrior(PriorModel):
    """Gaussian mixture sum_k w_k N(mean_k, Sigma_k); responsibilities use log-sum-exp."""

    def __init__(self, components: Sequence[tuple[float, SignalField, float | Sequence[float] | np.ndarray]]):
        if not components:
            raise ShapeMismatchError("GmmPrior requer pelo menos um componente.")
        built = [GmmComponent(float(weight), GaussianPrior(mean, covariance)) for weight, mean, covariance in components]
        super().__init__(built[0].prior.shape)
        for component in built:
            if component.prior.shape != self.shape:
                raise ShapeMismatchError("Todos os componentes do GMM devem ter o mesmo shape.")
        weights = np.array([component.weight for component in built])
        if np.any(weights <= 0.0):
            raise CovarianceError("Pesos do GMM devem ser positivos.")
        if abs(float(weights.sum()) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise CovarianceError(f"Pesos do GMM somam {weights.sum():.15g}; esperado 1.")
        self.components = built
        self.log_weights = np.log(weights)

    @property
    def capabilities(self) -> PriorCapabilities:
        return PriorCapabilities(has_exact_denoiser_jacobian=True)

    def _component_terms(self, x_flat: np.ndarray, alpha_bar: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-component log w_k N(x; ...) and scores, shapes (K,) and (K, d)."""
        # pylint: disable=protected-access
        log_terms = np.empty(len(self.components))
        scores = np.empty((len(self.components), self.dim))
        for index, component in enumerate(self.components):
            log_terms[index] = self.log_weights[index] + component.prior._log_density_flat(x_flat, alpha_bar)
            scores[index] = component.prior._score_flat(x_flat, alpha_bar)
        return log_terms, scores

    def responsibilities(self, x_t: SignalField, t: int, s: NoiseSchedule) -> np.ndarray:
        log_terms, _ = self._component_terms(self._flat_input(x_t), s.alpha_bar(t))
        return softmax(log_terms)

    def _score_flat(self, x_flat: np.ndarray, alpha_bar: float) -> np.ndarray:
        log_terms, scores = self._component_terms(x_flat, alpha_bar)
        return softmax(log_terms) @ scores

    def _log_density_flat(self, x_flat: np.ndarray, alpha_bar: float) -> float:
        log_terms, _ = self._component_terms(x_flat, alpha_bar)
        return float(logsumexp(log_terms))

    def _denoiser_jacobian_vec_flat(self, x_flat: np.ndarray, alpha_bar: float, v_flat: np.ndarray) -> np.ndarray:
        # x0_hat = (x + (1 - abar) grad log p_t) / sqrt(abar); the Hessian H of log p_t is
        # sum_k g_k (-M_k^-1) + sum_k g_k s_k s_k^T - s s^T, symmetric, so J^T v = J v.
        log_terms, scores = self._component_terms(x_flat, alpha_bar)
        gammas = softmax(log_terms)
        mean_score = gammas @ scores
        hessian_v = -mean_score * float(mean_score @ v_flat)
        for gamma, score, component in zip(gammas, scores, self.components):
            marginal = component.prior.covariance.marginal_eigenvalues(alpha_bar)
            hessian_v += gamma * (score * float(score @ v_flat) - component.prior.covariance.apply_spectral(1.0 / marginal, v_flat))
        return (v_flat + (1.0 - alpha_bar) * hessian_v) / np.sqrt(alpha_bar)

    def sample(self, rng: np.random.Generator) -> SignalField:
        index = int(rng.choice(len(self.components), p=np.exp(self.log_weights)))
        return self.components[index].prior.sample(rng)


def _residual(prior: PriorModel, x_t: SignalField, t: int, s: NoiseSchedule, y: SignalField, A: "LinearOperator") -> tuple[SignalField, SignalField]:
    """Returns (x0_hat, A x0_hat - y)."""
    estimate = prior.denoise(x_t, t, s)
    return estimate, A.apply(estimate) - y


def _finite_difference_gradient(function, x_t: SignalField) -> SignalField:
    x_t = np.asarray(x_t, dtype=np.float64)
    step = FINITE_DIFFERENCE_STEP * max(1.0, float(np.max(np.abs(x_t))))
    gradient = np.empty(x_t.size)
    flat = x_t.ravel()
    for index in range(flat.size):
        forward = flat.copy()
        backward = flat.copy()
        forward[index] += step
        backward[index] -= step
        gradient[index] = (function(forward.reshape(x_t.shape)) - function(backward.reshape(x_t.shape))) / (2.0 * step)
    return gradient.reshape(x_t.shape)


def guidance_gradient(
    p: PriorModel,
    x_t: SignalField,
    t: int,
    s: NoiseSchedule,
    y: SignalField,
    A: "LinearOperator",
    squared: bool = False,
    residual: SignalField | None = None,
) -> SignalField:
    """
    grad_{x_t} ||y - A x0_hat(x_t)||_2 (or its square when `squared`), through the full Tweedie
    dependence. Zero field when the residual norm is below 1e-12.

    `residual` may carry a precomputed A x0_hat(x_t) - y.
    """
    check_shape(np.asarray(y), A.output_shape, "y")
    if residual is None:
        _, residual = _residual(p, x_t, t, s, y, A)
    residual_norm = np.sqrt(squared_norm(residual))
    if residual_norm < ZERO_RESIDUAL_THRESHOLD:
        return np.zeros(p.shape)

    if p.capabilities.has_exact_denoiser_jacobian:
        back_projected = p.denoiser_jacobian_vec(x_t, t, s, A.apply_transpose(residual))
        scale = 2.0 if squared else 1.0 / residual_norm
        return scale * back_projected

    logger.debug("Jacobiano exato indisponível para %s; usando diferenças finitas.", type(p).__name__)

    def _objective(point: SignalField) -> float:
        _, point_residual = _residual(p, point, t, s, y, A)
        value = squared_norm(point_residual)
        return value if squared else float(np.sqrt(value))

    return _finite_difference_gradient(_objective, x_t)
