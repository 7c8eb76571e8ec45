"""
Testes estatísticos de aceitação em escala de bancada.

Lentos: desativados por padrão (`addopts = -m "not slow"`); rode com `pytest -m slow`.
"""

from dataclasses import replace

import numpy as np
import pytest

from dpps_restore.catalog.presets import ProblemSource
from dpps_restore.sampler import SamplerConfig, StepScaleMode
from dpps_restore.schedule import make_linear_schedule
from dpps_restore.services.experiment_service import (
    candidate_count_sweep,
    convergence_experiment,
    lambda_sweep,
    paired_differences,
    variance_stability,
)

pytestmark = pytest.mark.slow

GMM_PRESET = "gmm-inpaint-16"
PAIRED_SEEDS = tuple(range(20))


@pytest.fixture(scope="module")
def schedule():
    """
    Schedule linear padrão (T=1000).
    """
    return make_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture(scope="module")
def gmm_source():
    """
    Inpainting 16x16 com prior GMM e sigma_y = 0.01.
    """
    return ProblemSource(GMM_PRESET, sigma_y=0.01)


@pytest.fixture(scope="module")
def base_cfg():
    """
    Configuração padrão do sampler com n = 20.
    """
    return SamplerConfig(n_candidates=20).validate()


def test_variance_ordering_on_every_master_seed(schedule):
    """Var(único) > Var(média) > Var(mínimo) em todas as master seeds, com a média perto de 1/N."""
    report = variance_stability(ProblemSource("gaussian-1d-mask"), schedule, 10, 1000, (0, 1, 2, 3, 4), t=500)
    assert report.summary["ordering_holds"], report.summary["ordering_by_seed"]
    assert report.summary["ratio_within_band"]


def test_proximal_sampling_beats_random_sampling(schedule, gmm_source, base_cfg):
    """DPPS (n=20) tem oracle-MSE médio menor que DPS e vence em pelo menos 15 de 20 seeds pareadas."""
    report = candidate_count_sweep(gmm_source, schedule, (1, 20), PAIRED_SEEDS, base_cfg, include_adaptive=False)
    assert report.summary["metric"] == "oracle_mse"
    assert report.aggregate("oracle_mse", n="20") < report.aggregate("oracle_mse", n="1")
    differences = paired_differences(report.per_seed, "n", "20", "1", "oracle_mse")
    assert len(differences) == len(PAIRED_SEEDS)
    assert sum(difference < 0.0 for difference in differences) >= 15


def test_candidate_count_benefit_is_monotone(schedule, gmm_source, base_cfg):
    """O oracle-MSE médio não cresce com n em {1, 2, 10, 20}, tolerando 5% entre vizinhos."""
    report = candidate_count_sweep(gmm_source, schedule, (1, 2, 10, 20), PAIRED_SEEDS, base_cfg, include_adaptive=False)
    assert report.summary["non_increasing"], report.summary["means"]


def test_convergence_dominance_in_final_half(schedule, gmm_source, base_cfg):
    """
    Com o passo de guidance no tamanho por pixel de uma imagem 256x256 RGB, o resíduo médio de DPPS
    fica abaixo do de DPS em pelo menos 90% dos timesteps da metade final.
    """
    pixel_cfg = replace(base_cfg, step_scale_mode=StepScaleMode.PIXEL_NORMALIZED).validate()
    report = convergence_experiment(gmm_source, schedule, ("dpps_fixed_n", "dps_random"), tuple(range(10)), pixel_cfg)
    assert report.summary["residual_dominance_vs_dps"]["dpps_fixed_n"] >= 0.9


def test_step_scale_robustness(schedule, gmm_source, base_cfg):
    """A dispersão do oracle-MSE entre step_scales é menor para DPPS do que para DPS."""
    report = lambda_sweep(
        gmm_source, schedule, (0.5, 1.0, 2.0), ("dpps_fixed_n", "dps_random"), tuple(range(10)), base_cfg
    )
    spread = report.summary["spread"]
    assert np.isfinite(spread["dpps_fixed_n"])
    assert spread["dpps_fixed_n"] < spread["dps_random"]
