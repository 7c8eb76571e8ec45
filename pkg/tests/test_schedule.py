"""Testes unitários do schedule de ruído e dos coeficientes DDIM."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dpps_restore.errors import InvalidRangeError
from dpps_restore.schedule import (
    MIN_CANDIDATES,
    NoiseSchedule,
    VarianceConvention,
    adaptive_candidate_count,
    candidate_count_from_snr,
    ddim_coefficients,
    ddim_coefficients_from_alpha_bars,
    ddim_target,
    forward_sample,
    make_linear_schedule,
)


def test_toy_schedule_alpha_bars(toy_schedule):
    """Betas (0.1, 0.2) produzem abar = (1, 0.9, 0.72)."""
    assert toy_schedule.T == 2
    assert_allclose(toy_schedule.alpha_bars, [1.0, 0.9, 0.72], rtol=1e-12)
    assert toy_schedule.alpha_bar(0) == 1.0


def test_default_schedule_final_alpha_bar(default_schedule):
    """Schedule linear padrão termina com abar_T ~ 4.04e-5."""
    assert default_schedule.alpha_bar(1000) == pytest.approx(4.04e-5, rel=1e-2)
    assert np.all(np.diff(default_schedule.alpha_bars) < 0.0)


def test_schedule_invariants(default_schedule):
    """abar decrescente em (0, 1], snr * (1 - abar) = abar e sigmas finitos."""
    s = default_schedule
    assert np.all(s.alpha_bars[1:] > 0.0)
    assert np.all(s.alpha_bars <= 1.0)
    assert_allclose(s.snrs * (1.0 - s.alpha_bars[1:]), s.alpha_bars[1:], rtol=1e-12)
    assert np.all(np.isfinite(s.sigmas))
    assert np.all(s.sigmas >= 0.0)


def test_posterior_variance_vanishes_at_first_step(default_schedule):
    """Na convenção posterior, sigma_1 = 0."""
    assert default_schedule.sigma(1) == 0.0
    assert default_schedule.sigma(2) > 0.0


def test_beta_variance_convention():
    """Na convenção beta, sigma_t^2 = beta_t."""
    s = make_linear_schedule(10, 1e-3, 0.1, VarianceConvention.BETA)
    assert_allclose(s.sigmas**2, s.betas, rtol=1e-12)


def test_schedule_rejects_invalid_betas():
    """Betas fora de (0, 1) ou não crescentes são rejeitados."""
    with pytest.raises(InvalidRangeError):
        make_linear_schedule(2, 0.2, 0.1)
    with pytest.raises(InvalidRangeError):
        make_linear_schedule(1, 1e-4, 0.02)
    with pytest.raises(InvalidRangeError):
        NoiseSchedule.from_betas(np.array([0.1, 0.1, 0.2]))
    with pytest.raises(InvalidRangeError):
        NoiseSchedule.from_betas(np.array([0.5, 1.0]))


def test_schedule_arrays_are_read_only(toy_schedule):
    """Arrays do schedule não podem ser alterados após construção."""
    with pytest.raises(ValueError):
        toy_schedule.betas[0] = 0.5


def test_timestep_out_of_range(toy_schedule):
    """Timesteps fora de [1, T] levantam InvalidRangeError."""
    with pytest.raises(InvalidRangeError):
        toy_schedule.alpha_bar(3)
    with pytest.raises(InvalidRangeError):
        toy_schedule.beta(0)
    with pytest.raises(InvalidRangeError):
        ddim_coefficients(toy_schedule, 0)


def test_ddim_coefficients_toy_schedule(toy_schedule):
    """C1 = sqrt(1 - abar_{t-1}) / sqrt(1 - abar_t) e C2 = sqrt(abar_{t-1}) - sqrt(abar_t) C1."""
    c1, c2 = ddim_coefficients(toy_schedule, 2)
    assert c1 == pytest.approx(0.597614, abs=1e-5)
    assert c2 == pytest.approx(0.441591, abs=1e-5)


def test_ddim_coefficients_first_step(toy_schedule):
    """Em t=1 o alvo DDIM é a própria estimativa de x0."""
    c1, c2 = ddim_coefficients(toy_schedule, 1)
    assert c1 == 0.0
    assert c2 == 1.0


def test_ddim_coefficients_degenerate_step():
    """abar_{t-1} = abar_t gera o passo identidade (1, 0)."""
    assert ddim_coefficients_from_alpha_bars(0.5, 0.5) == (1.0, 0.0)
    assert ddim_coefficients_from_alpha_bars(1.0, 1.0) == (1.0, 0.0)


def test_ddim_target_recovers_previous_marginal(default_schedule, rng):
    """Com x_t construído a partir de eps, o alvo DDIM é sqrt(abar_{t-1}) x0 + sqrt(1 - abar_{t-1}) eps."""
    s = default_schedule
    x0 = rng.standard_normal((4, 4))
    epsilon = rng.standard_normal((4, 4))
    for t in (1, 2, 500, 1000):
        x_t = np.sqrt(s.alpha_bar(t)) * x0 + np.sqrt(1.0 - s.alpha_bar(t)) * epsilon
        expected = np.sqrt(s.alpha_bar(t - 1)) * x0 + np.sqrt(1.0 - s.alpha_bar(t - 1)) * epsilon
        assert_allclose(ddim_target(s, x_t, x0, t), expected, atol=1e-12)


def test_forward_sample_t0_returns_x0(default_schedule, rng):
    """t=0 devolve x0 exatamente."""
    x0 = rng.standard_normal(5)
    assert np.array_equal(forward_sample(default_schedule, x0, 0, np.random.default_rng(7)), x0)


def test_forward_sample_of_zero_signal_is_scaled_noise(default_schedule):
    """Com x0 = 0, x_t = sqrt(1 - abar_t) eps com eps da mesma seed."""
    t = 300
    x_t = forward_sample(default_schedule, np.zeros(6), t, np.random.default_rng(11))
    epsilon = np.random.default_rng(11).standard_normal(6)
    assert np.array_equal(x_t, np.sqrt(1.0 - default_schedule.alpha_bar(t)) * epsilon)


def test_forward_sample_marginal_statistics(default_schedule):
    """Média e variância empíricas de q(x_t | x0) batem com sqrt(abar) x0 e 1 - abar."""
    s = default_schedule
    t = 500
    draws = forward_sample(s, np.full(100_000, 2.0), t, np.random.default_rng(5))
    variance = 1.0 - s.alpha_bar(t)
    standard_error = np.sqrt(variance / draws.size)
    assert abs(draws.mean() - np.sqrt(s.alpha_bar(t)) * 2.0) < 4.0 * standard_error
    assert draws.var() == pytest.approx(variance, rel=0.03)


def test_ddim_target_marginal_statistics(default_schedule):
    """O alvo DDIM de x_t ~ q(x_t | x0) segue q(x_{t-1} | x0)."""
    s = default_schedule
    t = 400
    x0 = np.full(100_000, 0.5)
    targets = ddim_target(s, forward_sample(s, x0, t, np.random.default_rng(9)), x0, t)
    variance = 1.0 - s.alpha_bar(t - 1)
    standard_error = np.sqrt(variance / targets.size)
    assert abs(targets.mean() - np.sqrt(s.alpha_bar(t - 1)) * 0.5) < 4.0 * standard_error
    assert targets.var() == pytest.approx(variance, rel=0.03)


def test_candidate_count_from_snr():
    """n = floor(n_max (1 - exp(-snr))) com piso 2."""
    assert candidate_count_from_snr(np.log(2.0), 50) == 25
    assert candidate_count_from_snr(1e-6, 50) == MIN_CANDIDATES
    assert candidate_count_from_snr(1e4, 50) == 50


def test_candidate_count_rejects_small_n_max():
    """n_max < 2 é rejeitado."""
    with pytest.raises(InvalidRangeError):
        candidate_count_from_snr(1.0, 1)


def test_adaptive_candidate_count_bounds(default_schedule):
    """Poucos candidatos no ruído alto, quase n_max perto de t=1, monotônico em t."""
    s = default_schedule
    counts = np.array([adaptive_candidate_count(s, t, 50) for t in range(1, s.T + 1)])
    assert counts[-1] == MIN_CANDIDATES
    assert counts[0] in (49, 50)
    assert np.all(np.diff(counts) <= 0)
    assert np.all((counts >= MIN_CANDIDATES) & (counts <= 50))
