"""
Closed-form posteriors p(x0 | y) for linear-Gaussian measurements.

Gaussian priors use the conjugate update; Gaussian mixtures combine the per-component conjugate
posteriors with evidence weights w_k N(y; A mu_k, A Sigma_k A^T + sigma_y^2 I).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import softmax

from dpps_restore.config import DEFAULT_DENSE_CAP, logger
from dpps_restore.errors import (
    CapExceededError,
    InvalidRangeError,
    SingularSystemError,
    UnsupportedCapabilityError,
)
from dpps_restore.fields import SignalField, check_shape
from dpps_restore.operators import LinearOperator, dense_matrix
from dpps_restore.priors import GaussianPrior, GmmPrior, PriorModel


@dataclass(frozen=True, eq=False)
class OracleSolution:
    posterior_mean: SignalField
    posterior_covariance: np.ndarray
    component_weights: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class _ConjugateTerms:
    mean: np.ndarray
    covariance: np.ndarray
    log_evidence: float


def _conjugate_update(
    mean: np.ndarray, covariance: np.ndarray, matrix: np.ndarray, y_flat: np.ndarray, sigma_y: float
) -> _ConjugateTerms:
    gain_factor = matrix @ covariance
    innovation_covariance = gain_factor @ matrix.T + sigma_y**2 * np.eye(matrix.shape[0])
    try:
        factor = linalg.cho_factor(innovation_covariance, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(
            "Sistema A Sigma A^T + sigma_y^2 I singular: A não é injetivo no suporte do prior e sigma_y = 0."
        ) from exc

    innovation = y_flat - matrix @ mean
    # solve for the innovation and the gain in one pass
    solved = linalg.cho_solve(factor, np.column_stack([innovation, gain_factor]))
    posterior_mean = mean + gain_factor.T @ solved[:, 0]
    posterior_covariance = covariance - gain_factor.T @ solved[:, 1:]
    posterior_covariance = 0.5 * (posterior_covariance + posterior_covariance.T)

    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    log_evidence = -0.5 * (float(innovation @ solved[:, 0]) + log_det + innovation.size * np.log(2.0 * np.pi))
    return _ConjugateTerms(posterior_mean, posterior_covariance, log_evidence)


def _prepare(prior: PriorModel, A: LinearOperator, y: SignalField, sigma_y: float, cap: int) -> tuple[np.ndarray, np.ndarray]:
    if sigma_y < 0.0:
        raise InvalidRangeError(f"sigma_y deve ser >= 0 (recebido {sigma_y}).")
    if prior.shape != A.input_shape:
        raise InvalidRangeError(f"Prior com shape {prior.shape} e operador com entrada {A.input_shape}.")
    y = np.asarray(y, dtype=np.float64)
    check_shape(y, A.output_shape, "y")
    return dense_matrix(A, cap), y.ravel()


def gaussian_restoration_oracle(
    prior: GaussianPrior, A: LinearOperator, y: SignalField, sigma_y: float, cap: int = DEFAULT_DENSE_CAP
) -> OracleSolution:
    """mean = mu0 + Sigma0 A^T S^-1 (y - A mu0), cov = Sigma0 - Sigma0 A^T S^-1 A Sigma0, S = A Sigma0 A^T + sigma_y^2 I."""
    matrix, y_flat = _prepare(prior, A, y, sigma_y, cap)
    terms = _conjugate_update(prior.mean.ravel(), prior.covariance.matrix(), matrix, y_flat, sigma_y)
    return OracleSolution(terms.mean.reshape(prior.shape), terms.covariance)


def gmm_restoration_oracle(
    prior: GmmPrior, A: LinearOperator, y: SignalField, sigma_y: float, cap: int = DEFAULT_DENSE_CAP
) -> OracleSolution:
    matrix, y_flat = _prepare(prior, A, y, sigma_y, cap)
    terms = [
        _conjugate_update(component.prior.mean.ravel(), component.prior.covariance.matrix(), matrix, y_flat, sigma_y)
        for component in prior.components
    ]
    weights = softmax(prior.log_weights + np.array([term.log_evidence for term in terms]))
    posterior_mean = sum(weight * term.mean for weight, term in zip(weights, terms))
    second_moment = sum(weight * (term.covariance + np.outer(term.mean, term.mean)) for weight, term in zip(weights, terms))
    posterior_covariance = second_moment - np.outer(posterior_mean, posterior_mean)
    posterior_covariance = 0.5 * (posterior_covariance + posterior_covariance.T)
    return OracleSolution(posterior_mean.reshape(prior.shape), posterior_covariance, weights)


def restoration_oracle(
    prior: PriorModel, A: LinearOperator, y: SignalField, sigma_y: float, cap: int = DEFAULT_DENSE_CAP
) -> OracleSolution:
    if isinstance(prior, GaussianPrior):
        return gaussian_restoration_oracle(prior, A, y, sigma_y, cap)
    if isinstance(prior, GmmPrior):
        return gmm_restoration_oracle(prior, A, y, sigma_y, cap)
    raise UnsupportedCapabilityError(f"Sem oráculo fechado para {type(prior).__name__}.")


def try_restoration_oracle(
    prior: PriorModel, A: LinearOperator, y: SignalField, sigma_y: float, cap: int = DEFAULT_DENSE_CAP
) -> OracleSolution | None:
    """Oracle when tractable, None (with a warning) when the dense system is too large or singular."""
    try:
        return restoration_oracle(prior, A, y, sigma_y, cap)
    except (UnsupportedCapabilityError, SingularSystemError, CapExceededError) as exc:
        logger.warning("Oráculo indisponível: %s", exc)
        return None
