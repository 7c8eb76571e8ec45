"""
Pytest fixtures and configuration for the test suite.
"""

import numpy as np
import pytest

from dpps_restore.catalog.presets import build_problem
from dpps_restore.priors import GaussianPrior, GmmPrior
from dpps_restore.schedule import NoiseSchedule, make_linear_schedule


@pytest.fixture
def rng():
    """
    Gerador determinístico para os testes.
    """
    return np.random.default_rng(1234)


@pytest.fixture
def toy_schedule():
    """
    Schedule de dois passos com betas (0.1, 0.2): abar = (1, 0.9, 0.72).
    """
    return make_linear_schedule(2, 0.1, 0.2)


@pytest.fixture
def quarter_schedule():
    """
    Schedule de dois passos com abar_2 = 0.25.
    """
    return NoiseSchedule.from_betas(np.array([0.375, 0.6]))


@pytest.fixture
def small_schedule():
    """
    Schedule curto (T=20) para execuções completas rápidas do sampler.
    """
    return make_linear_schedule(20, 1e-3, 0.3)


@pytest.fixture
def default_schedule():
    """
    Schedule DDPM padrão (T=1000, beta de 1e-4 a 0.02).
    """
    return make_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture
def standard_prior():
    """
    N(0, I) em dimensão 3.
    """
    return GaussianPrior(np.zeros(3), 1.0)


@pytest.fixture
def gmm_prior(rng):
    """
    Mistura de três componentes em d=3 com covariâncias cheias, diagonais e isotrópicas.
    """
    factor = rng.standard_normal((3, 3))
    full_covariance = 0.3 * factor @ factor.T + 0.2 * np.eye(3)
    return GmmPrior(
        [
            (0.5, np.array([1.0, -1.0, 0.5]), full_covariance),
            (0.3, np.array([-1.0, 0.5, 0.0]), np.array([0.4, 0.7, 0.3])),
            (0.2, np.array([0.0, 1.0, -1.0]), 0.5),
        ]
    )


@pytest.fixture
def problem_1d():
    """
    Preset 1D (d=8) com máscara alternada.
    """
    return build_problem("gaussian-1d-mask", seed=0)


@pytest.fixture
def problem_gmm():
    """
    Preset de inpainting 16x16 com prior GMM.
    """
    return build_problem("gmm-inpaint-16", seed=0)
